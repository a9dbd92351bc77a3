//! Command-line front end: each subcommand loads a JSON experiment config,
//! applies flag overrides, runs it and prints a JSON summary on stdout.
//! Errors are printed as JSON on stderr with a nonzero exit code.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cmr_falsify::harness::{execute, ExperimentConfig, Method, Mode, PowerCurveSpec};
use cmr_falsify::{Error, Result};

#[derive(Parser)]
#[command(name = "cmr-falsify", version, about = "Falsify observational causal studies against RCT data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test a combined RCT + observational CSV.
    Falsify(RunArgs),
    /// Estimate rejection rates over simulated replicates.
    Simulate(RunArgs),
    /// Tabulate closed-form ATE/GATE power curves.
    PowerCurves(RunArgs),
    /// Evaluate the witness function on a two-column grid.
    Witness(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config (optional for power-curves).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated methods: mmr-contrast, mmr-absolute, ate, gate.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Use the design's closed-form nuisances.
    #[arg(long)]
    oracle_nuisances: bool,
    /// Override the number of replicates.
    #[arg(long)]
    replicates: Option<usize>,
}

fn build_config(mode: Mode, args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if mode == Mode::PowerCurves => ExperimentConfig::default(),
        None => return Err(Error::Config("--config is required".into())),
    };
    cfg.mode = mode;
    if mode == Mode::PowerCurves && cfg.power_curves.is_none() {
        cfg.power_curves = Some(PowerCurveSpec::default());
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(methods) = &args.methods {
        cfg.methods = methods.iter().map(|m| Method::parse(m)).collect::<Result<_>>()?;
    }
    if args.oracle_nuisances {
        cfg.oracle_nuisances = true;
    }
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let (mode, args) = match &cli.command {
        Command::Falsify(a) => (Mode::Falsify, a),
        Command::Simulate(a) => (Mode::SimulatePower, a),
        Command::PowerCurves(a) => (Mode::PowerCurves, a),
        Command::Witness(a) => (Mode::Witness, a),
    };
    let cfg = build_config(mode, args)?;
    let summary = execute(&cfg, args.out.as_deref())?;
    Ok(serde_json::to_value(summary)?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let body = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
