use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iterand::config::{ConfigError, ExperimentConfig};
use iterand::harness::{self, HarnessError, RunRecord};
use iterand::theory::{self, TheoryError, TheorySuiteConfig};
use thiserror::Error;

/// Score-based pruning with iterative re-randomization: training runs,
/// sweeps and the theory suite.
#[derive(Debug, Parser)]
#[command(name = "iterand", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one configuration for each of its seeds.
    Train(RunArgs),
    /// Run the cross product of a `[sweep]` section's values and seeds.
    Sweep(RunArgs),
    /// Run the Monte Carlo suite for the approximation bounds.
    Theory(TheoryArgs),
    /// Aggregate `runs.json` files into a mean ± std table.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML experiment file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this seed only, replacing `seeds`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, replacing `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Runs executed in parallel, replacing `jobs`.
    #[arg(long)]
    jobs: Option<usize>,
    /// Override a config key, e.g. `--set rho=0.5 --set sweep.axis=p`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct TheoryArgs {
    /// TOML suite file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "theory")]
    out: PathBuf,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    /// One or more `runs.json` files or directories containing one.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Also write `summary.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Failed(String),
    #[error("{0}")]
    Other(String),
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(c) => CliError::Config(c),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<TheoryError> for CliError {
    fn from(e: TheoryError) -> Self {
        match e {
            TheoryError::Config(c) => CliError::Config(c),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failed(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => run_experiments(args, false),
        Command::Sweep(args) => run_experiments(args, true),
        Command::Theory(args) => run_theory(args),
        Command::Summarize(args) => summarize(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_experiment(args: &RunArgs) -> Result<ExperimentConfig, ConfigError> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seeds=[{seed}]"));
    }
    if let Some(jobs) = args.jobs {
        overrides.push(format!("jobs={jobs}"));
    }
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path, &overrides)?,
        None => ExperimentConfig::from_toml("", &overrides)?,
    };
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

fn run_experiments(args: RunArgs, sweep: bool) -> Result<(), CliError> {
    let mut cfg = load_experiment(&args)?;
    if sweep && cfg.sweep.is_none() {
        return Err(ConfigError::Constraint {
            key: "sweep".into(),
            msg: "is required by the sweep command".into(),
        }
        .into());
    }
    if !sweep {
        cfg.sweep = None;
    }
    let runs = harness::expand_sweep(&cfg)?;
    eprintln!(
        "{} run(s), data from {}, writing to {}",
        runs.len(),
        cfg.dataset_dir().display(),
        cfg.output.display()
    );
    let data = harness::load_datasets(&cfg)?;
    let records = harness::run_sweep(&cfg, &data, cfg.jobs)?;
    for rec in &records {
        match (&rec.error, rec.final_test_acc) {
            (Some(e), _) => eprintln!("{}: failed: {e}", rec.run_id),
            (None, Some(acc)) => eprintln!("{}: test acc {:.4} ({:.1}s)", rec.run_id, acc, rec.wall_time_s),
            (None, None) => {}
        }
    }
    harness::save_records(&records, &cfg.output)?;
    print!("{}", harness::emit_summary(&records).0);
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        return Err(CliError::Other(format!("{failed} of {} runs failed", records.len())));
    }
    Ok(())
}

fn run_theory(args: TheoryArgs) -> Result<(), CliError> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = match &args.config {
        Some(path) => TheorySuiteConfig::from_file(path, &overrides)?,
        None => TheorySuiteConfig::from_toml("", &overrides)?,
    };
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    let report = theory::run_theory_suite(&cfg)?;
    theory::write_suite(&report, &args.out)?;
    let s = &report.summary;
    println!("samples required: {}", s.samples_required);
    for w in &s.widths {
        let deep: Vec<String> = w
            .deep
            .iter()
            .map(|l| format!("{}{}", l.width, if l.collapsed { " (floor)" } else { "" }))
            .collect();
        println!("R={:<3} scalar width {:<5} deep widths [{}]", w.r, w.scalar, deep.join(", "));
    }
    for c in &s.checks {
        println!("{} {:<22} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("wrote {}", args.out.display());
    if s.passed {
        Ok(())
    } else {
        let names: Vec<&str> = s.failed().iter().map(|c| c.name.as_str()).collect();
        Err(CliError::Failed(format!("failed properties: {}", names.join(", "))))
    }
}

fn runs_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("runs.json")
    } else {
        path.to_path_buf()
    }
}

fn summarize(args: SummarizeArgs) -> Result<(), CliError> {
    let mut records: Vec<RunRecord> = Vec::new();
    for input in &args.inputs {
        records.extend(harness::load_records(&runs_file(input))?);
    }
    let (table, csv) = harness::emit_summary(&records);
    print!("{table}");
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| CliError::Other(format!("{}: {e}", out.display())))?;
        let path = out.join("summary.csv");
        std::fs::write(&path, csv).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
