//! `moore`: MoE-ize, train, evaluate, merge, gradient-check, count and analyze.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use moore_core::MooreError;

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "moore", version, about = "Mixture of orthogonal rank-one experts")]
struct Cli {
    /// JSON experiment config, overlaid on the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Gradient shards per batch.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// MoORE, one of the baseline kinds, frozen or full_finetune.
    #[arg(long, global = true)]
    adapter: Option<String>,
    #[arg(long, global = true)]
    dt: Option<usize>,
    #[arg(long, global = true)]
    ds: Option<usize>,
    /// Householder chain length.
    #[arg(long = "L", global = true)]
    l: Option<usize>,
    /// Experts per baseline adapter.
    #[arg(long = "M", global = true)]
    m: Option<usize>,
    /// Baseline LoRA rank.
    #[arg(long = "r", global = true)]
    r: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Factorize a MOOREMAT weight into a MOORELYR layer checkpoint.
    Moeize {
        input: PathBuf,
        output: PathBuf,
        /// Number of tasks the router serves.
        #[arg(long, default_value_t = 1)]
        tasks: usize,
    },
    /// Fold the Householder chain into the right factor.
    Merge { input: PathBuf, output: PathBuf },
    /// Pretrain on suite A, adapt on suite B, write the run to --out.
    Train,
    /// Test accuracy of a run directory, optionally with a replacement layer.
    Eval {
        run: PathBuf,
        /// MOORELYR checkpoint used in place of the stored one.
        #[arg(long)]
        layer: Option<PathBuf>,
        /// Evaluate the pretrained dense host instead of the adapted one.
        #[arg(long)]
        pretrained: bool,
    },
    /// Analytic vs finite-difference gradients over the default shape grid.
    Gradcheck,
    /// Learnable-parameter counts as JSON.
    Paramcount {
        #[arg(long = "D")]
        d: usize,
        #[arg(long = "K")]
        k: usize,
        /// Output width, baselines only (defaults to D).
        #[arg(long = "D-out")]
        d_out: Option<usize>,
    },
    /// Print the effective experiment config.
    Config,
    /// Summaries over run directories.
    Analyze {
        #[command(subcommand)]
        what: Analyze,
    },
}

#[derive(Debug, Subcommand)]
pub enum Analyze {
    /// Routing profiles of every adapted task and their correlation matrix.
    Routing { run: PathBuf },
    /// Retained-task accuracy loss between pretraining and adaptation.
    Oblivion {
        run: PathBuf,
        /// Accuracies are percentages; also divide by 100.
        #[arg(long)]
        percent: bool,
    },
    /// Overall accuracy against task count, per adapter.
    Conflict {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

/// Failure classes of the binary.
#[derive(Debug)]
pub enum CliError {
    Core(MooreError),
    Usage(String),
    GradcheckFailed(usize),
}

impl From<MooreError> for CliError {
    fn from(e: MooreError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "UsageError",
            CliError::GradcheckFailed(_) => "GradcheckFailed",
        }
    }

    fn detail(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::Usage(s) => s.clone(),
            CliError::GradcheckFailed(n) => format!("{n} tensor rows exceed their tolerance"),
        }
    }

    /// 1 usage, 2 I/O, 3 numerical precondition, 4 gradcheck failure.
    fn exit_code(&self) -> u8 {
        use MooreError::*;
        match self {
            CliError::Usage(_) => 1,
            CliError::GradcheckFailed(_) => 4,
            CliError::Core(e) => match e {
                Io(_) | Json(_) | Format(_) => 2,
                RankDeficient { .. } | NormFloor { .. } | NoConvergence(_) | NonFinite(_) | Divergence { .. } => 3,
                Shape { .. }
                | OddL(_)
                | TaskIndexOutOfRange { .. }
                | IndexOutOfRange { .. }
                | InvalidSpec(_)
                | Provenance(_)
                | EmptySampleSet
                | MissingRuns(_)
                | MissingBaseline(_) => 1,
            },
        }
    }
}

fn init_logging() {
    let level = match std::env::var("MOORE_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("info") => log::LevelFilter::Info,
        Ok("debug") => log::LevelFilter::Debug,
        _ => log::LevelFilter::Warn,
    };
    env_logger::Builder::new().filter_level(level).target(env_logger::Target::Stderr).init();
}

fn report(e: &CliError) -> ExitCode {
    let line = serde_json::json!({"error": e.kind(), "detail": e.detail()});
    eprintln!("{line}");
    ExitCode::from(e.exit_code())
}

fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(&CliError::Usage(e.to_string().trim_end().to_string())),
    };
    let ov = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        threads: cli.threads,
        adapter: cli.adapter.clone(),
        dt: cli.dt,
        ds: cli.ds,
        l: cli.l,
        m: cli.m,
        r: cli.r,
    };
    let cfg = cli.config.as_deref();
    let result = match cli.command {
        Command::Moeize { input, output, tasks } => commands::moeize(&input, &output, tasks, &ov),
        Command::Merge { input, output } => commands::merge(&input, &output),
        Command::Train => commands::train(cfg, &ov),
        Command::Eval { run, layer, pretrained } => commands::eval(&run, layer.as_deref(), pretrained),
        Command::Gradcheck => commands::gradcheck(&ov),
        Command::Paramcount { d, k, d_out } => commands::paramcount(d, k, d_out, &ov),
        Command::Config => commands::show_config(cfg, &ov),
        Command::Analyze { what } => commands::analyze(what, &ov),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
