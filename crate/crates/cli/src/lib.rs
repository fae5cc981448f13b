//! The `hierseg` command line: corpus generation, splitting, sampling plans, masking,
//! inference, evaluation and reports.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data or environment error,
//! 4 backend or protocol error.

pub mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hierseg_core::Task;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_CONFIG, message: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_DATA, message: msg.into() }
    }

    pub fn backend(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_BACKEND, message: msg.into() }
    }

    /// Unwritable output locations and similar; shares the data exit code.
    pub fn env(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_DATA, message: msg.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<hierseg_core::Error> for CliError {
    fn from(e: hierseg_core::Error) -> Self {
        use hierseg_core::Error as E;
        let code = match (&e, e.root()) {
            (_, E::Config(_) | E::InvalidArgument(_)) => EXIT_CONFIG,
            (E::Backend { .. }, _) | (_, E::Protocol(_)) => EXIT_BACKEND,
            _ => EXIT_DATA,
        };
        CliError { code, message: e.to_string() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hierseg", version, about = "Hierarchical semantic segmentation toolkit for bridge inspection")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Run config (JSON). Omitted fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config field, e.g. `--set damage.crop=32` or `--set scales=[1.0]`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory; nothing is written outside it.
    #[arg(long, default_value = "out", global = true)]
    pub out: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0, global = true)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic viaduct corpus.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        count: usize,
        /// Number of viaduct groups (default: min(10, count)).
        #[arg(long)]
        groups: Option<usize>,
        /// Scene parameters (JSON).
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Split a corpus into train and validation sets by viaduct.
    Split {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Export the importance-sampling plan for the training split.
    SamplePlan {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        task: Task,
    },
    /// Export masked training data from ground-truth component maps.
    Mask {
        #[arg(long)]
        index: PathBuf,
    },
    /// Predict label maps for every image of an index, or for one image.
    Infer {
        #[arg(long, conflicts_with = "image", required_unless_present = "image")]
        index: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Stage::Both)]
        stage: Stage,
        /// Also write each backend's fused scores as raw f32 with a JSON sidecar.
        #[arg(long)]
        dump_scores: bool,
    },
    /// Evaluate ablation variants and write report.json, IoU tables and overlays.
    Eval {
        #[arg(long)]
        index: PathBuf,
        /// Comma-separated subset of ens, is, is+ms, is+ms+sgm.
        #[arg(long, default_value = "ens,is,is+ms,is+ms+sgm")]
        variants: String,
        /// Score every image instead of the validation split.
        #[arg(long)]
        all_images: bool,
        #[arg(long)]
        no_overlays: bool,
    },
    /// Re-emit the IoU tables of an existing report and print a summary.
    Report {
        /// Directory holding report.json (default: the output directory).
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Serve a roster backend over the wire protocol on stdio or TCP.
    Serve {
        #[arg(long)]
        backend: String,
        #[arg(long)]
        task: Task,
        /// host:port to listen on; stdio when omitted.
        #[arg(long)]
        listen: Option<String>,
        #[arg(long, default_value_t = 0)]
        max_tile: u32,
        /// Stop after this many TCP connections.
        #[arg(long)]
        connections: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Component,
    Damage,
    Both,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("hierseg: {e}");
            e.code
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let jobs = cli.global.jobs;
    if jobs == 0 {
        return commands::dispatch(&cli);
    }
    let pool = rayon_pool(jobs)?;
    pool.install(|| commands::dispatch(&cli))
}

fn rayon_pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::config(format!("cannot start {jobs} workers: {e}")))
}
