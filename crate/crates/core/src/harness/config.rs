//! Experiment configuration, read from a single JSON file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::SubgroupRule;
use crate::data::CsvSchema;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::mmr::MmrConfig;
use crate::nuisance::NuisanceSpecs;
use crate::simgen::DesignSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Test a given RCT + observational CSV.
    Falsify,
    /// Rejection rates over simulated replicates.
    SimulatePower,
    /// Closed-form power tables.
    PowerCurves,
    /// Witness function on a two-column projection grid.
    Witness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MmrContrast,
    MmrAbsolute,
    Ate,
    Gate,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::MmrContrast => "mmr-contrast",
            Method::MmrAbsolute => "mmr-absolute",
            Method::Ate => "ate",
            Method::Gate => "gate",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "mmr-contrast" => Ok(Method::MmrContrast),
            "mmr-absolute" => Ok(Method::MmrAbsolute),
            "ate" => Ok(Method::Ate),
            "gate" => Ok(Method::Gate),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// A CSV holding both studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub path: String,
    #[serde(default)]
    pub schema: CsvSchema,
}

/// Two-column projection on which the witness is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessSpec {
    pub columns: [String; 2],
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// `[lo, hi]` per column; defaults to the observed range.
    #[serde(default)]
    pub ranges: Option<[[f64; 2]; 2]>,
}

fn default_resolution() -> usize {
    20
}

/// Grid for the closed-form power tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerCurveSpec {
    pub alphas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub sigma: f64,
    pub n: f64,
    /// 1: bias in one subgroup, 2: opposite biases, 3: shared bias.
    pub scenarios: Vec<u8>,
}

impl Default for PowerCurveSpec {
    fn default() -> Self {
        Self {
            alphas: vec![0.005, 0.01, 0.05, 0.1],
            deltas: (0..=100).map(|k| k as f64 * 0.1).collect(),
            sigma: 1.0,
            n: 1.0,
            scenarios: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Input data for falsify and witness runs.
    pub data: Option<DataSource>,
    /// Generator for simulate-power runs (and witness runs without data).
    pub design: Option<DesignSpec>,
    pub methods: Vec<Method>,
    /// One or more subgroup definitions; the GATE indicator of a replicate
    /// is the average over definitions.
    pub subgroups: Vec<Vec<SubgroupRule>>,
    /// Drop probabilities for the selection-bias injector; empty runs the
    /// data as is.
    pub selection_sweep: Vec<f64>,
    pub kernel: KernelSpec,
    #[serde(rename = "B")]
    pub b: usize,
    pub alpha: f64,
    /// Number of replicates R.
    pub replicates: usize,
    pub seed: u64,
    /// Cross-fitting folds.
    pub folds: usize,
    pub nuisance: NuisanceSpecs,
    /// Use the design's closed-form nuisances instead of fitting.
    pub oracle_nuisances: bool,
    /// Resample the observational rows with replacement per replicate.
    pub bootstrap_observational: bool,
    /// Upper bound on kernel memory across concurrently running replicates.
    pub max_memory_mb: Option<f64>,
    pub output_dir: Option<String>,
    pub witness: Option<WitnessSpec>,
    pub power_curves: Option<PowerCurveSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::SimulatePower,
            data: None,
            design: None,
            methods: vec![Method::MmrContrast],
            subgroups: Vec::new(),
            selection_sweep: Vec::new(),
            kernel: KernelSpec::default(),
            b: 100,
            alpha: 0.05,
            replicates: 1,
            seed: 0,
            folds: 3,
            nuisance: NuisanceSpecs::default(),
            oracle_nuisances: false,
            bootstrap_observational: false,
            max_memory_mb: None,
            output_dir: None,
            witness: None,
            power_curves: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn mmr_config(&self) -> MmrConfig {
        MmrConfig { kernel: self.kernel.clone(), b: self.b, alpha: self.alpha }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0,1)");
        }
        if self.mode == Mode::PowerCurves {
            if self.power_curves.is_none() {
                return bad("power-curves mode needs a `power_curves` block");
            }
            return Ok(());
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if self.methods.is_empty() {
            return bad("methods must be nonempty");
        }
        if self.methods.contains(&Method::Gate) && (self.subgroups.is_empty() || self.subgroups.iter().any(Vec::is_empty)) {
            return bad("gate requires at least one nonempty subgroup definition");
        }
        if self.b == 0 {
            return bad("B must be at least 1");
        }
        if self.folds < 2 && !self.oracle_nuisances {
            return bad("cross-fitting needs at least 2 folds");
        }
        if let Some(p) = self.selection_sweep.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("selection probability {p} outside [0,1]")));
        }
        match self.mode {
            Mode::Falsify => {
                if self.data.is_none() {
                    return bad("falsify mode needs a `data` source");
                }
                if self.oracle_nuisances {
                    return bad("oracle nuisances need a simulated design");
                }
            }
            Mode::SimulatePower => {
                if self.design.is_none() {
                    return bad("simulate-power mode needs a `design`");
                }
            }
            Mode::Witness => {
                if self.witness.is_none() {
                    return bad("witness mode needs a `witness` block");
                }
                if self.data.is_none() && self.design.is_none() {
                    return bad("witness mode needs `data` or `design`");
                }
                if self.oracle_nuisances && self.design.is_none() {
                    return bad("oracle nuisances need a simulated design");
                }
            }
            Mode::PowerCurves => unreachable!(),
        }
        self.nuisance.outcome.validate()?;
        self.nuisance.treatment.validate()?;
        self.nuisance.selection.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = ExperimentConfig::from_json(r#"{"mode":"simulate-power","design":{"kind":"witness"}}"#).unwrap();
        assert_eq!(cfg.b, 100);
        assert_eq!(cfg.folds, 3);
        assert_eq!(cfg.methods, vec![Method::MmrContrast]);
        cfg.validate().unwrap();
        let again = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn validation_errors() {
        let base = ExperimentConfig { design: Some(DesignSpec::default()), ..Default::default() };
        assert!(ExperimentConfig { replicates: 0, ..base.clone() }.validate().is_err());
        assert!(ExperimentConfig { methods: vec![], ..base.clone() }.validate().is_err());
        assert!(ExperimentConfig { methods: vec![Method::Gate], ..base.clone() }.validate().is_err());
        assert!(ExperimentConfig { mode: Mode::Falsify, ..base.clone() }.validate().is_err());
        assert!(ExperimentConfig { selection_sweep: vec![1.2], ..base.clone() }.validate().is_err());
        assert!(ExperimentConfig { mode: Mode::PowerCurves, ..base.clone() }.validate().is_err());
        base.validate().unwrap();
    }

    #[test]
    fn method_names() {
        for m in [Method::MmrContrast, Method::MmrAbsolute, Method::Ate, Method::Gate] {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("bogus").is_err());
    }
}
