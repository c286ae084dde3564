//! `rnr`: estimation, Monte Carlo tables and chain diagnostics.
//!
//! Exit codes: 0 success, 2 configuration error (including bad input files
//! and an unwritable output directory), 3 failure while running.

mod estimate;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rnr_core::harness::{self, ExperimentConfig};
use rnr_core::{run_chain, run_chain_observed, run_twin_chains, InferenceReport, JsonlDump};

use crate::estimate::EstimateConfig;

#[derive(Debug, Parser)]
#[command(name = "rnr", version, about = "Resampled Newton-Raphson estimation and inference")]
struct Cli {
    /// TOML config: an estimation config for `estimate` and `chain-dump`,
    /// an experiment config for `mc`.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads for `mc` (defaults to the available cores).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Runs `mc` at the published replication count.
    #[arg(long, global = true)]
    paper_scale: bool,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One chain on one dataset; writes report.json and report.csv.
    Estimate,
    /// Monte Carlo experiment; writes results.csv, config.json and table.txt.
    Mc,
    /// Every iterate of one chain as JSON lines in chain.jsonl.
    ChainDump,
}

/// Failures split by exit code.
#[derive(Debug)]
enum Failure {
    Config(String),
    Run(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Run(_) => 3,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn run_err(e: impl std::fmt::Display) -> Failure {
    Failure::Run(e.to_string())
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    path.as_deref()
        .ok_or_else(|| Failure::Config(format!("--{flag} is required for this command")))
}

fn load_estimate(cli: &Cli) -> Result<EstimateConfig, Failure> {
    let mut config = EstimateConfig::from_path(require(&cli.config, "config")?).map_err(config_err)?;
    if let Some(seed) = cli.seed {
        config.chain.seed = seed;
    }
    if cli.paper_scale {
        log::warn!("--paper-scale only affects mc");
    }
    Ok(config)
}

fn estimate(cli: &Cli) -> Result<(), Failure> {
    let config = load_estimate(cli)?;
    let out = require(&cli.out, "out")?;
    let model = config.load_model().map_err(config_err)?;
    let (plan, chain) = config.chain(model.as_ref()).map_err(config_err)?;
    harness::prepare_output(out).map_err(config_err)?;

    let names = model.parameter_names();
    let report = if model.as_simulation().is_some() {
        let (a, b) = run_twin_chains(model.as_ref(), &plan, &chain).map_err(run_err)?;
        InferenceReport::from_twin(&a, &b, names, config.alpha)
    } else {
        let draws = run_chain(model.as_ref(), &plan, &chain).map_err(run_err)?;
        InferenceReport::from_chain(&draws, names, config.alpha)
    }
    .map_err(run_err)?;

    let json = serde_json::to_vec_pretty(&report).map_err(run_err)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(run_err)?;
    harness::write_atomic(&out.join("report.json"), &json).map_err(run_err)?;
    harness::write_atomic(&out.join("report.csv"), &csv).map_err(run_err)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}

fn mc(cli: &Cli) -> Result<(), Failure> {
    let mut config = ExperimentConfig::from_path(require(&cli.config, "config")?).map_err(config_err)?;
    if cli.paper_scale {
        config = config.with_paper_scale();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.workers.is_some() {
        config.workers = cli.workers;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.output.clone())
        .ok_or_else(|| Failure::Config("no output directory: pass --out or set `output`".into()))?;
    config.validate().map_err(config_err)?;
    harness::prepare_output(&out).map_err(config_err)?;

    let table = harness::run_table(&config).map_err(run_err)?;
    harness::emit(&table, &config, &out).map_err(run_err)?;
    print!("{}", table.render());
    // Results are written first so a run over the failure budget can still be inspected.
    harness::check_failures(&table).map_err(run_err)
}

fn chain_dump(cli: &Cli) -> Result<(), Failure> {
    let config = load_estimate(cli)?;
    let out = require(&cli.out, "out")?;
    let model = config.load_model().map_err(config_err)?;
    let (plan, chain) = config.chain(model.as_ref()).map_err(config_err)?;
    harness::prepare_output(out).map_err(config_err)?;

    let path = out.join("chain.jsonl");
    let tmp = out.join(format!(".chain.jsonl.tmp-{}", std::process::id()));
    let result = (|| -> rnr_core::Result<()> {
        let mut dump = JsonlDump::new(BufWriter::new(fs::File::create(&tmp)?));
        run_chain_observed(model.as_ref(), &plan, &chain, 0, |rec| dump.record(rec))?;
        let file = dump.into_inner().into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        fs::rename(&tmp, &path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(run_err)?;
    writeln!(std::io::stdout(), "{}", path.display()).map_err(run_err)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Estimate => estimate(&cli),
        Command::Mc => mc(&cli),
        Command::ChainDump => chain_dump(&cli),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let (kind, message) = match &failure {
                Failure::Config(m) => ("configuration error", m),
                Failure::Run(m) => ("run failed", m),
            };
            eprintln!("rnr: {kind}: {message}");
            ExitCode::from(failure.code())
        }
    }
}
