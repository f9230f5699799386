use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod output;
mod tables;

use delaylab::labkit::validate::{validate, Status};
use delaylab::labkit::{monte_carlo, run_single};
use delaylab::{ConfigError, Error, ExperimentConfig};

const DEFAULT_OUT: &str = "delaylab-output";

const AFTER_HELP: &str = "\
Summary line (printed by `run` on stdout, format is stable):
  mean_regret=<f64> stderr=<f64> mean_gstar=<f64> runs=<usize> horizon=<usize>
where mean_regret is the mean cumulative regret at the horizon, stderr its
standard error over runs and mean_gstar the mean peak outstanding feedback count.

Exit codes: 0 success, 1 invariant failure, 2 config error, 3 I/O error.

Logging: DELAYLAB_LOG=quiet|info|debug (default: warnings only).";

/// Simulation lab for online learning with delayed feedback.
#[derive(Debug, Parser)]
#[command(name = "delaylab", version, after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the Monte Carlo experiment and write trace.csv, aggregate.csv and summary.json.
    Run(RunArgs),
    /// Run the experiment and check the exact invariants on every run.
    Validate(CommonArgs),
    /// Print the requested bounds at a few horizons without simulating.
    Bounds(BoundsArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: u32,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    /// Experiment config (JSON); bounds come from its `bounds` list, or
    /// every applicable bound when the list is empty.
    #[arg(long)]
    config: PathBuf,
    /// Number of rows in the table.
    #[arg(long, default_value_t = 10)]
    rows: usize,
}

enum Failure {
    Invariant(String),
    Config(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invariant(_) => 1,
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invariant(m) | Failure::Config(m) | Failure::Io(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(m) => Failure::Io(m),
            other => Failure::Invariant(other.to_string()),
        }
    }
}

fn init_logging() {
    let level = match std::env::var("DELAYLAB_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("info") => log::LevelFilter::Info,
        Ok("debug") => log::LevelFilter::Debug,
        _ => log::LevelFilter::Warn,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn load(args: &CommonArgs, out: Option<PathBuf>) -> Result<ExperimentConfig, Failure> {
    Ok(ExperimentConfig::load(&args.config)?.with_overrides(args.seed, args.runs, out)?)
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let config = load(&args.common, args.out)?;
    log::info!(
        "{} on {} actions, n = {}, {} runs, seed {}",
        config.learner.label(),
        config.environment.num_actions(),
        config.horizon,
        config.runs,
        config.seed
    );
    let first = run_single(&config, 0)?;
    let stats = monte_carlo(&config, args.common.jobs as usize)?;
    let report = output::Report::build(&config, &stats)?;
    let dir = config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let mut trace = Vec::new();
    first
        .trace
        .write_csv(&mut trace, config.trace_diagnostics)
        .map_err(|e| Failure::Io(e.to_string()))?;
    output::write_all(
        &dir,
        &[
            ("trace.csv", trace),
            ("aggregate.csv", report.aggregate_csv(&stats).into_bytes()),
            ("summary.json", report.summary_json()?.into_bytes()),
        ],
    )
    .map_err(|e| Failure::Io(format!("writing {}: {e}", dir.display())))?;
    println!("{}", output::summary_line(&stats));
    for flag in &report.summary.bounds {
        log::info!(
            "{}: empirical {:.4} vs bound {:.4} -> {}",
            flag.name,
            flag.empirical,
            flag.bound,
            if flag.pass { "pass" } else { "FAIL" }
        );
    }
    Ok(())
}

fn cmd_validate(args: CommonArgs) -> Result<(), Failure> {
    let config = load(&args, None)?;
    let report = validate(&config, args.jobs as usize)?;
    for outcome in &report.checks {
        let status = match outcome.status {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::Skipped => "skip",
        };
        println!("{status} {}", outcome.check);
    }
    match report.first_failure() {
        None => Ok(()),
        Some(v) => Err(Failure::Invariant(format!("invariant violated: {v}"))),
    }
}

fn cmd_bounds(args: BoundsArgs) -> Result<(), Failure> {
    let config = ExperimentConfig::load(&args.config)?;
    let table = tables::bound_table(&config, args.rows.max(1))?;
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Bounds(args) => cmd_bounds(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
