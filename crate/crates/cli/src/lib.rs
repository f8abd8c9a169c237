//! Command-line driver: simulation, pipeline runs, cross-validated
//! classification and report emission.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "shapefda", version, about = "Morphometric pipelines for 3D landmark curves")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write simulated replicates as landmark CSV files.
    Simulate(Common),
    /// Run pipelines and write k95, MSE, score, scree and reconstruction tables.
    Run(Common),
    /// Cross-validate classifiers on every pipeline's scores.
    Classify(Common),
    /// Summarise the tables in the output directory as report.md.
    Report(Common),
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// Landmark CSV files (same as --input).
    pub files: Vec<PathBuf>,
    /// Flat key=value configuration file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for simulation and fold assignment.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated pipeline names, or "all".
    #[arg(long)]
    pub pipelines: Option<String>,
    /// Comma-separated classifier names (lda, multinom, svm), or "all".
    #[arg(long)]
    pub classifiers: Option<String>,
    /// Output directory (default: out).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores); results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Landmark CSV file; repeat for several replicates.
    #[arg(long)]
    pub input: Vec<PathBuf>,
    /// specimen_id,label CSV replacing the labels in the landmark files.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Any configuration key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Common {
    /// The configuration file, then the flags in a fixed order.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Input(format!("--set expects key=value, got {kv:?}")))?;
            config.set(k, v, None)?;
        }
        if let Some(seed) = self.seed {
            config.set("seed", &seed.to_string(), None)?;
        }
        if let Some(p) = &self.pipelines {
            config.set("pipelines", p, None)?;
        }
        if let Some(c) = &self.classifiers {
            config.set("classifiers", c, None)?;
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        if let Some(t) = self.threads {
            config.threads = t;
        }
        let inputs: Vec<PathBuf> = self.input.iter().chain(&self.files).cloned().collect();
        if !inputs.is_empty() {
            config.inputs = inputs;
        }
        if let Some(l) = &self.labels {
            config.labels = Some(l.clone());
        }
        Ok(config)
    }
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Input(format!("cannot start {threads} threads: {e}")))?;
    Ok(pool.install(f))
}

/// Executes a parsed command line.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let (common, command): (&Common, fn(&RunConfig) -> Result<(), CliError>) = match &cli.command {
        Command::Simulate(c) => (c, commands::simulate),
        Command::Run(c) => (c, commands::run),
        Command::Classify(c) => (c, commands::classify),
        Command::Report(c) => (c, commands::report),
    };
    let config = common.resolve()?;
    with_threads(config.threads, || command(&config))?
}

/// Parses `args` (without the program name) and executes them; returns the exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv = std::iter::once(std::ffi::OsString::from("shapefda")).chain(args.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("shapefda: {e}");
            e.exit_code()
        }
    }
}
