//! Data generators: the IHDP-style semi-synthetic benchmark with a
//! closed-form oracle, small synthetic designs, and the selection-bias
//! injector that manufactures a known assumption violation.

pub mod base;
pub mod benchmark;
pub mod designs;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use base::{
    printed_weight, resample_obs_weighted, resample_rct, BaseSource, ColumnMap, IhdpBase, SURROGATE_ROWS,
};
pub use benchmark::{
    conceal_confounders, concealment_order, generate_benchmark, generate_confounders, simulate_outcomes,
    write_bundle, GeneratedBenchmark, IhdpOracle, SimConfig, SimulatedOutcomes, Strength,
};
pub use designs::{BaselineShiftDesign, BinarySelectionDesign, WitnessDesign};

use crate::data::CombinedDataset;
use crate::error::{Error, Result};
use crate::nuisance::NuisanceOracle;
use crate::rng::{self, TAG_SELECTION};

/// Rows kept after dropping each untreated, event-free observational row
/// with probability `p`. One uniform is drawn per row, so the rows dropped
/// at a smaller `p` are also dropped at every larger `p` for the same seed.
pub fn selection_bias_rows(data: &CombinedDataset, p: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("drop probability {p} outside [0,1]")));
    }
    if !data.has_binary_outcome() {
        return Err(Error::InvalidParameter("selection-bias injection needs a binary outcome".into()));
    }
    let mut rng = rng::from_path(seed, &[TAG_SELECTION]);
    let mut keep = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let u: f64 = rng.random();
        let eligible = data.study()[i] == 1 && data.treatment()[i] == 0 && data.outcome()[i] == 0.0;
        if !(eligible && u < p) {
            keep.push(i);
        }
    }
    Ok(keep)
}

/// Drops untreated, event-free observational rows with probability `p`.
pub fn inject_selection_bias(data: &CombinedDataset, p: f64, seed: u64) -> Result<CombinedDataset> {
    let keep = selection_bias_rows(data, p, seed)?;
    if keep.len() == data.n() {
        return Ok(data.clone());
    }
    data.select_rows(&keep)
}

/// A named data-generating design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DesignSpec {
    Ihdp {
        #[serde(default)]
        sim: SimConfig,
        #[serde(default)]
        base: BaseSource,
    },
    BaselineShift(BaselineShiftDesign),
    BinarySelection(BinarySelectionDesign),
    Witness(WitnessDesign),
}

impl Default for DesignSpec {
    fn default() -> Self {
        DesignSpec::Ihdp { sim: SimConfig::default(), base: BaseSource::default() }
    }
}

/// Generated data plus the oracle for its nuisance functions.
pub struct SimulatedData {
    pub dataset: CombinedDataset,
    pub oracle: Box<dyn NuisanceOracle + Send>,
}

/// Instantiates designs repeatedly without reloading the base pool.
pub struct DesignSampler {
    spec: DesignSpec,
    base: Option<IhdpBase>,
}

impl DesignSampler {
    pub fn new(spec: &DesignSpec) -> Result<Self> {
        let base = match spec {
            DesignSpec::Ihdp { base, sim } => {
                sim.validate()?;
                Some(base.load()?)
            }
            _ => None,
        };
        Ok(Self { spec: spec.clone(), base })
    }

    pub fn base(&self) -> Option<&IhdpBase> {
        self.base.as_ref()
    }

    /// One dataset; `seed` replaces any seed held in the design.
    pub fn sample(&self, seed: u64) -> Result<SimulatedData> {
        Ok(match &self.spec {
            DesignSpec::Ihdp { sim, .. } => {
                let cfg = SimConfig { seed, ..sim.clone() };
                let bench = generate_benchmark(&cfg, self.base.as_ref().expect("loaded in new"))?;
                SimulatedData { dataset: bench.dataset, oracle: Box::new(bench.oracle) }
            }
            DesignSpec::BaselineShift(d) => {
                let (dataset, o) = d.generate(seed)?;
                SimulatedData { dataset, oracle: Box::new(o) }
            }
            DesignSpec::BinarySelection(d) => {
                let (dataset, o) = d.generate(seed)?;
                SimulatedData { dataset, oracle: Box::new(o) }
            }
            DesignSpec::Witness(d) => {
                let (dataset, o) = d.generate(seed)?;
                SimulatedData { dataset, oracle: Box::new(o) }
            }
        })
    }
}
