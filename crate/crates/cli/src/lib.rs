//! Command-line driver: configuration, the staged audit pipeline, and exit
//! code mapping.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod config;
pub mod pipeline;

pub use config::{DatasetConfig, ExperimentConfig, ModelsConfig, Seeds};
pub use pipeline::{decisions, Models, Run, RunMaps};

/// A failed command, split by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration, arguments or inputs (exit 1).
    Validation(String),
    /// Anything else (exit 2).
    Internal(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Internal(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "error: {m}"),
            Failure::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<saltrust::Error> for Failure {
    fn from(e: saltrust::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Internal(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "saltrust", version, about = "Audit the trustworthiness of saliency maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate (or import) the dataset into <out>/data.
    GenData(StageArgs),
    /// Train both ARCH_A replicates, ARCH_B and both segmenters into <out>/models.
    Train(StageArgs),
    /// Compute saliency maps and PR curves into <out>/maps and <out>/pr.
    Maps(StageArgs),
    /// Run every stage and write the report.
    Audit(StageArgs),
    /// Run the four tests on stored outputs and write the report.
    Report(StageArgs),
}

#[derive(Debug, Args)]
pub struct StageArgs {
    /// JSON experiment config; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's top-level seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config's output_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for map and metric evaluation (default: all processors).
    #[arg(long)]
    pub workers: Option<usize>,
}

impl StageArgs {
    pub fn run(&self) -> Result<Run, Failure> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let out = self
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .ok_or_else(|| Failure::Validation("output_dir: pass --out or set output_dir in the config".into()))?;
        Run::new(cfg, out)
    }
}

fn init_workers(workers: Option<usize>) -> Result<(), Failure> {
    if let Some(n) = workers {
        if n == 0 {
            return Err(Failure::Validation("--workers must be at least 1".into()));
        }
        // A pool built earlier in this process keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn execute(command: &Command) -> Result<(), Failure> {
    let (args, stage): (&StageArgs, fn(&Run) -> Result<(), Failure>) = match command {
        Command::GenData(a) => (a, |r| r.gen_data().map(drop)),
        Command::Train(a) => (a, |r| r.train().map(drop)),
        Command::Maps(a) => (a, |r| r.maps().map(drop)),
        Command::Audit(a) => (a, |r| r.audit().map(drop)),
        Command::Report(a) => (a, |r| r.report().map(drop)),
    };
    init_workers(args.workers)?;
    let run = args.run()?;
    stage(&run)
}

/// Parses `argv` (program name first), runs the command, and returns the
/// process exit code.
pub fn cli_run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    }
}
