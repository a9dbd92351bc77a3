//! Output writers: report and rate tables, witness grids, power tables.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode, PowerCurveSpec, WitnessSpec};
use super::experiment::{fit_nuisances, replicate_seed, run_experiment, ExperimentReport, Source};
use crate::baselines::{power_ate, power_gate, scenario3_g, PowerSpec};
use crate::data::CombinedDataset;
use crate::error::{Error, Result};
use crate::kernels::{Kernel, Standardizer};
use crate::mmr::{projection_grid, run_on_signals, witness_eval, GridAxis, MmrTestResult};
use crate::signals::{contrast_signals, SignalVector};

/// Writes `report.json`, `rates.csv` and `timing.json`.
pub fn write_report(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    let mut w = csv::Writer::from_path(dir.join("rates.csv"))?;
    w.write_record(["selection_p", "method", "rate", "completed", "failed"])?;
    for pt in &report.points {
        let p = pt.selection_p.map(|p| p.to_string()).unwrap_or_default();
        for (m, rate) in &pt.rates {
            w.write_record([p.clone(), m.name().to_string(), rate.to_string(), pt.completed.to_string(), pt.failed.to_string()])?;
        }
    }
    w.flush()?;
    std::fs::write(
        dir.join("timing.json"),
        serde_json::to_string_pretty(&serde_json::json!({ "runtime_seconds": report.runtime_seconds }))?,
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessMetadata {
    /// `ok`, or `zero witness` when the witness vanishes on the grid.
    pub status: String,
    pub columns: [String; 2],
    pub resolution: usize,
    pub ranges: [[f64; 2]; 2],
    /// Scale applied to reach unit root-mean-square (absent for a zero witness).
    pub normalizer: Option<f64>,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// Witness values on a grid of raw covariate points.
#[derive(Debug, Clone, PartialEq)]
pub struct WitnessExport {
    pub grid: Array2<f64>,
    pub values: Array1<f64>,
    pub metadata: WitnessMetadata,
}

/// Evaluates the witness of a completed contrast test on a two-column
/// projection; other covariates sit at their pooled medians.
pub fn export_witness(
    data: &CombinedDataset,
    psi: &SignalVector,
    test: &MmrTestResult,
    spec: &WitnessSpec,
) -> Result<WitnessExport> {
    let x = data.covariates();
    let cols = [
        data.column_index(&spec.columns[0]).ok_or_else(|| Error::MissingColumn(spec.columns[0].clone()))?,
        data.column_index(&spec.columns[1]).ok_or_else(|| Error::MissingColumn(spec.columns[1].clone()))?,
    ];
    let ranges = match spec.ranges {
        Some(r) => r,
        None => cols.map(|c| {
            let col = x.column(c);
            [col.fold(f64::INFINITY, |a, &b| a.min(b)), col.fold(f64::NEG_INFINITY, |a, &b| a.max(b))]
        }),
    };
    let axis = |k: usize| GridAxis { column: cols[k], lo: ranges[k][0], hi: ranges[k][1] };
    let grid = projection_grid(x.view(), axis(0), axis(1), spec.resolution)?;
    let scaler = Standardizer::fit(x.view());
    let train = scaler.transform(x.view());
    let query = scaler.transform(grid.view());
    let kernel: &Kernel = &test.kernel;
    let (values, normalizer, status) = match witness_eval(psi, train.view(), kernel, query.view()) {
        Ok(w) => (w.values, Some(w.normalizer), "ok"),
        Err(Error::ZeroWitness) => (Array1::zeros(grid.nrows()), None, "zero witness"),
        Err(e) => return Err(e),
    };
    Ok(WitnessExport {
        grid,
        values,
        metadata: WitnessMetadata {
            status: status.into(),
            columns: spec.columns.clone(),
            resolution: spec.resolution,
            ranges,
            normalizer,
            statistic: test.statistic,
            p_value: test.p_value,
            reject: test.reject,
        },
    })
}

/// Writes `witness_grid.csv` (two projected columns and the witness) and
/// `witness.json`.
pub fn write_witness(export: &WitnessExport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let meta = &export.metadata;
    let mut w = csv::Writer::from_path(dir.join("witness_grid.csv"))?;
    w.write_record([meta.columns[0].as_str(), meta.columns[1].as_str(), "witness"])?;
    let first = |row: usize, k: usize| -> f64 {
        let lo = meta.ranges[k][0];
        let hi = meta.ranges[k][1];
        let step = if k == 0 { row / meta.resolution } else { row % meta.resolution };
        lo + (hi - lo) * step as f64 / (meta.resolution - 1) as f64
    };
    for (r, v) in export.values.iter().enumerate() {
        w.write_record([first(r, 0).to_string(), first(r, 1).to_string(), v.to_string()])?;
    }
    w.flush()?;
    std::fs::write(dir.join("witness.json"), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

/// Runs the contrast test once and exports the witness.
pub fn run_witness(config: &ExperimentConfig) -> Result<WitnessExport> {
    config.validate()?;
    let spec = config.witness.as_ref().ok_or_else(|| Error::Config("missing `witness` block".into()))?;
    let source = Source::open(config)?;
    let seed = replicate_seed(config.seed, 0);
    let drawn = source.draw(seed, false)?;
    let data = &drawn.dataset;
    let nuis = fit_nuisances(config, data, drawn.oracle.as_deref(), seed)?;
    let psi = contrast_signals(data, &nuis)?;
    let z = Standardizer::fit(data.covariates().view()).transform(data.covariates().view());
    let test = run_on_signals(&psi, z.view(), &config.mmr_config(), seed)?;
    export_witness(data, &psi, &test, spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurveRow {
    pub scenario: u8,
    pub alpha: f64,
    pub delta: f64,
    pub power_ate: f64,
    pub power_gate: f64,
    /// Shared-bias power gap at the standardized drift `|δ|√N/σ`.
    pub g: f64,
}

/// Subgroup biases for a scenario at bias size `delta`.
fn scenario_biases(scenario: u8, delta: f64) -> Result<(f64, f64)> {
    match scenario {
        1 => Ok((delta, 0.0)),
        2 => Ok((delta, -delta)),
        3 => Ok((delta, delta)),
        s => Err(Error::InvalidParameter(format!("unknown scenario {s}"))),
    }
}

/// Tabulates ATE and GATE power and the shared-bias gap over the grid.
pub fn power_curves(spec: &PowerCurveSpec) -> Result<Vec<PowerCurveRow>> {
    if spec.alphas.is_empty() || spec.deltas.is_empty() || spec.scenarios.is_empty() {
        return Err(Error::InvalidParameter("power-curve grid is empty".into()));
    }
    let mut rows = Vec::new();
    for &scenario in &spec.scenarios {
        for &alpha in &spec.alphas {
            for &delta in &spec.deltas {
                let (delta1, delta2) = scenario_biases(scenario, delta)?;
                let ps = PowerSpec { delta1, delta2, sigma: spec.sigma, n: spec.n, alpha };
                let drift = delta.abs() * spec.n.sqrt() / spec.sigma;
                rows.push(PowerCurveRow {
                    scenario,
                    alpha,
                    delta,
                    power_ate: power_ate(&ps)?,
                    power_gate: power_gate(&ps)?,
                    g: scenario3_g(drift, alpha)?,
                });
            }
        }
    }
    Ok(rows)
}

pub fn export_power_curves(spec: &PowerCurveSpec, path: impl AsRef<Path>) -> Result<Vec<PowerCurveRow>> {
    let rows = power_curves(spec)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}

/// Summary of what a run wrote, for the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub output_dir: String,
    pub files: Vec<String>,
    pub rates: Option<serde_json::Value>,
    pub failures: usize,
}

/// Runs any mode and writes its outputs under `out` (or the configured
/// output directory, or `./out`).
pub fn execute(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunSummary> {
    config.validate()?;
    let dir: PathBuf = out
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)?;
    let name = |f: &str| dir.join(f).to_string_lossy().into_owned();
    let summary = match config.mode {
        Mode::Falsify | Mode::SimulatePower => {
            let report = run_experiment(config)?;
            write_report(&report, &dir)?;
            RunSummary {
                mode: config.mode,
                output_dir: dir.to_string_lossy().into_owned(),
                files: vec![name("report.json"), name("rates.csv"), name("timing.json")],
                rates: Some(serde_json::to_value(&report.points)?),
                failures: report.failures.len(),
            }
        }
        Mode::Witness => {
            let export = run_witness(config)?;
            write_witness(&export, &dir)?;
            RunSummary {
                mode: config.mode,
                output_dir: dir.to_string_lossy().into_owned(),
                files: vec![name("witness_grid.csv"), name("witness.json")],
                rates: None,
                failures: 0,
            }
        }
        Mode::PowerCurves => {
            let spec = config.power_curves.as_ref().expect("validated");
            export_power_curves(spec, dir.join("power_curves.csv"))?;
            RunSummary {
                mode: config.mode,
                output_dir: dir.to_string_lossy().into_owned(),
                files: vec![name("power_curves.csv")],
                rates: None,
                failures: 0,
            }
        }
    };
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
    Ok(summary)
}
