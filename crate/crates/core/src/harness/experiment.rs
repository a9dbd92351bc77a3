//! Replicate loop: obtain data, fit nuisances, run every method, aggregate.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Method, Mode};
use crate::baselines::{ate_test, gate_test, subgroup_labels};
use crate::data::{assign_folds, load_csv, CombinedDataset};
use crate::error::{Error, Result};
use crate::kernels::Standardizer;
use crate::mmr::{run_on_signals, GramOperator};
use crate::nuisance::{crossfit_nuisances, oracle_nuisances, NuisanceEstimates, NuisanceOracle};
use crate::rng::{self, TAG_BOOTSTRAP, TAG_FOLDS, TAG_NUISANCE, TAG_REPLICATE, TAG_RESAMPLE};
use crate::signals::{contrast_signals, outcome_pair_signal_difference};
use crate::simgen::{inject_selection_bias, DesignSampler, DesignSpec};

/// One method's outcome on one replicate. GATE carries one entry per
/// subgroup definition; the replicate indicator is their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: Method,
    pub p_values: Vec<f64>,
    pub rejects: Vec<bool>,
    pub indicator: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    /// Seed that regenerates this replicate's data and randomness.
    pub seed: u64,
    pub selection_p: Option<f64>,
    pub n: usize,
    pub results: Vec<MethodRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub index: usize,
    pub seed: u64,
    pub selection_p: Option<f64>,
    pub message: String,
}

/// Rejection rates at one selection-bias level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub selection_p: Option<f64>,
    pub completed: usize,
    pub failed: usize,
    pub rates: BTreeMap<Method, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// SHA-256 over the config and every input file it references.
    pub input_hash: String,
    pub points: Vec<SweepPoint>,
    pub replicates: Vec<ReplicateRecord>,
    pub failures: Vec<Failure>,
    /// Wall-clock seconds; not serialized so reports stay reproducible.
    #[serde(skip)]
    pub runtime_seconds: f64,
}

impl ExperimentReport {
    pub fn rate(&self, method: Method, selection_p: Option<f64>) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.selection_p == selection_p)
            .and_then(|p| p.rates.get(&method).copied())
    }

    /// Rates recomputed from the stored per-replicate p-values.
    pub fn recount(&self) -> Vec<BTreeMap<Method, f64>> {
        let alpha = self.config.alpha;
        self.points
            .iter()
            .map(|pt| {
                let recs: Vec<&ReplicateRecord> =
                    self.replicates.iter().filter(|r| r.selection_p == pt.selection_p).collect();
                let mut out = BTreeMap::new();
                for &m in &self.config.methods {
                    let sum: f64 = recs
                        .iter()
                        .filter_map(|r| r.results.iter().find(|x| x.method == m))
                        .map(|x| {
                            let hits = x.p_values.iter().filter(|&&p| p < alpha).count();
                            hits as f64 / x.p_values.len() as f64
                        })
                        .sum();
                    out.insert(m, if recs.is_empty() { f64::NAN } else { sum / recs.len() as f64 });
                }
                out
            })
            .collect()
    }
}

/// Where replicate data comes from.
pub(crate) enum Source {
    Fixed(CombinedDataset),
    Simulated(DesignSampler),
}

pub(crate) struct ReplicateData {
    pub dataset: CombinedDataset,
    pub oracle: Option<Box<dyn NuisanceOracle + Send>>,
}

impl Source {
    pub(crate) fn open(config: &ExperimentConfig) -> Result<Self> {
        match (&config.data, &config.design) {
            (Some(src), _) if config.mode != Mode::SimulatePower => Ok(Source::Fixed(load_csv(&src.path, &src.schema)?)),
            (_, Some(design)) => Ok(Source::Simulated(DesignSampler::new(design)?)),
            _ => Err(Error::Config("no data source or design".into())),
        }
    }

    pub(crate) fn draw(&self, seed: u64, bootstrap_obs: bool) -> Result<ReplicateData> {
        let (dataset, oracle) = match self {
            Source::Fixed(d) => (d.clone(), None),
            Source::Simulated(s) => {
                let sim = s.sample(seed)?;
                (sim.dataset, Some(sim.oracle))
            }
        };
        let dataset = if bootstrap_obs { bootstrap_observational(&dataset, seed)? } else { dataset };
        Ok(ReplicateData { dataset, oracle })
    }
}

/// Keeps the RCT rows and resamples the observational rows with replacement.
pub fn bootstrap_observational(data: &CombinedDataset, seed: u64) -> Result<CombinedDataset> {
    let obs = data.obs_rows();
    let mut rng = rng::from_path(seed, &[TAG_RESAMPLE, 2]);
    let mut rows = data.rct_rows();
    rows.extend((0..obs.len()).map(|_| obs[rng.random_range(0..obs.len())]));
    data.select_rows(&rows)
}

fn hash_inputs(config: &ExperimentConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config)?);
    if let Some(src) = &config.data {
        h.update(std::fs::read(&src.path)?);
    }
    if let Some(DesignSpec::Ihdp { base, .. }) = &config.design {
        if let Some(p) = &base.path {
            h.update(std::fs::read(p)?);
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Seed of replicate `index` under `master`.
pub fn replicate_seed(master: u64, index: usize) -> u64 {
    rng::derive_seed(master, &[TAG_REPLICATE, index as u64])
}

pub(crate) fn fit_nuisances(
    config: &ExperimentConfig,
    data: &CombinedDataset,
    oracle: Option<&(dyn NuisanceOracle + Send)>,
    seed: u64,
) -> Result<NuisanceEstimates> {
    if config.oracle_nuisances {
        let o = oracle.ok_or_else(|| Error::Config("design has no oracle".into()))?;
        return Ok(oracle_nuisances(data, o));
    }
    let folds = assign_folds(data.n(), config.folds, rng::derive_seed(seed, &[TAG_FOLDS]))?;
    crossfit_nuisances(data, &config.nuisance, &folds, rng::derive_seed(seed, &[TAG_NUISANCE]))
}

/// Runs every configured method on one dataset.
pub fn run_methods(
    config: &ExperimentConfig,
    data: &CombinedDataset,
    nuis: &NuisanceEstimates,
    seed: u64,
) -> Result<Vec<MethodRecord>> {
    let mmr_cfg = config.mmr_config();
    let boot_seed = rng::derive_seed(seed, &[TAG_BOOTSTRAP]);
    let mut standardized: Option<Array2<f64>> = None;
    let mut out = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let record = match method {
            Method::MmrContrast | Method::MmrAbsolute => {
                let z = standardized
                    .get_or_insert_with(|| Standardizer::fit(data.covariates().view()).transform(data.covariates().view()));
                let psi = if method == Method::MmrContrast {
                    contrast_signals(data, nuis)?
                } else {
                    outcome_pair_signal_difference(data, nuis)?
                };
                let res = run_on_signals(&psi, z.view(), &mmr_cfg, boot_seed)?;
                single(method, res.p_value, res.reject)
            }
            Method::Ate => {
                let res = ate_test(data, nuis, config.alpha)?;
                single(method, res.p_value, res.reject)
            }
            Method::Gate => {
                let mut p_values = Vec::new();
                let mut rejects = Vec::new();
                for rules in &config.subgroups {
                    let (labels, names) = subgroup_labels(data, rules)?;
                    let res = gate_test(data, nuis, &labels, &names, config.alpha)?;
                    p_values.push(res.adjusted_p_value());
                    rejects.push(res.reject);
                }
                let indicator = rejects.iter().filter(|&&r| r).count() as f64 / rejects.len() as f64;
                MethodRecord { method, p_values, rejects, indicator }
            }
        };
        out.push(record);
    }
    Ok(out)
}

fn single(method: Method, p: f64, reject: bool) -> MethodRecord {
    MethodRecord { method, p_values: vec![p], rejects: vec![reject], indicator: f64::from(u8::from(reject)) }
}

fn sweep(config: &ExperimentConfig) -> Vec<Option<f64>> {
    if config.selection_sweep.is_empty() {
        vec![None]
    } else {
        config.selection_sweep.iter().map(|&p| Some(p)).collect()
    }
}

fn run_replicate(
    config: &ExperimentConfig,
    source: &Source,
    index: usize,
) -> Vec<std::result::Result<ReplicateRecord, Failure>> {
    let seed = replicate_seed(config.seed, index);
    let points = sweep(config);
    let fail = |p: Option<f64>, e: Error| Failure { index, seed, selection_p: p, message: e.to_string() };
    let drawn = match source.draw(seed, config.bootstrap_observational) {
        Ok(d) => d,
        Err(e) => {
            let msg = e.to_string();
            return points
                .into_iter()
                .map(|p| Err(Failure { index, seed, selection_p: p, message: msg.clone() }))
                .collect();
        }
    };
    points
        .into_iter()
        .map(|p| {
            let run = || -> Result<ReplicateRecord> {
                // the same seed at every level keeps the dropped rows nested
                let data = match p {
                    Some(p) => inject_selection_bias(&drawn.dataset, p, seed)?,
                    None => drawn.dataset.clone(),
                };
                let nuis = fit_nuisances(config, &data, drawn.oracle.as_deref(), seed)?;
                let results = run_methods(config, &data, &nuis, seed)?;
                Ok(ReplicateRecord { index, seed, selection_p: p, n: data.n(), results })
            };
            run().map_err(|e| fail(p, e))
        })
        .collect()
}

fn check_memory(config: &ExperimentConfig, source: &Source) -> Result<()> {
    let Some(limit_mb) = config.max_memory_mb else {
        return Ok(());
    };
    if !config.methods.iter().any(|m| matches!(m, Method::MmrContrast | Method::MmrAbsolute)) {
        return Ok(());
    }
    let probe = source.draw(replicate_seed(config.seed, 0), false)?.dataset;
    let z = Standardizer::fit(probe.covariates().view()).transform(probe.covariates().view());
    let kernel = config.kernel.resolve(z.view())?;
    let concurrent = rayon::current_num_threads().min(config.replicates).max(1);
    let needed = GramOperator::planned_bytes(&kernel, probe.n(), probe.d()) * concurrent as f64 / (1024.0 * 1024.0);
    if needed > limit_mb {
        return Err(Error::MemoryLimit { needed_mb: needed.ceil() as u64, limit_mb: limit_mb.floor() as u64 });
    }
    Ok(())
}

/// Runs the replicate loop of a falsify or simulate-power configuration.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    if !matches!(config.mode, Mode::Falsify | Mode::SimulatePower) {
        return Err(Error::Config("run_experiment handles falsify and simulate-power modes".into()));
    }
    let start = Instant::now();
    let input_hash = hash_inputs(config)?;
    let source = Source::open(config)?;
    check_memory(config, &source)?;

    let per_replicate: Vec<_> =
        (0..config.replicates).into_par_iter().map(|r| run_replicate(config, &source, r)).collect();
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for outcome in per_replicate.into_iter().flatten() {
        match outcome {
            Ok(r) => replicates.push(r),
            Err(f) => failures.push(f),
        }
    }
    let points = sweep(config)
        .into_iter()
        .map(|p| {
            let recs: Vec<&ReplicateRecord> = replicates.iter().filter(|r| r.selection_p == p).collect();
            let failed = failures.iter().filter(|f| f.selection_p == p).count();
            let mut rates = BTreeMap::new();
            for &m in &config.methods {
                let sum: f64 = recs
                    .iter()
                    .filter_map(|r| r.results.iter().find(|x| x.method == m))
                    .map(|x| x.indicator)
                    .sum();
                rates.insert(m, if recs.is_empty() { f64::NAN } else { sum / recs.len() as f64 });
            }
            SweepPoint { selection_p: p, completed: recs.len(), failed, rates }
        })
        .collect();
    Ok(ExperimentReport {
        config: config.clone(),
        input_hash,
        points,
        replicates,
        failures,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}
