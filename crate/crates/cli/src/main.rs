//! `metaloss` command line: evolve, adapt, train, analyze and bench.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use metaloss::autodiff::AutodiffError;
use metaloss::evomal::EvoError;
use metaloss::harness::HarnessError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io { .. } => 1,
        }
    }
}

fn autodiff_error(e: AutodiffError) -> CliError {
    match e {
        AutodiffError::NonFinite(_) => CliError::Numeric(e.to_string()),
        other => CliError::Config(other.to_string()),
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Diverged { .. } => CliError::Numeric(e.to_string()),
            HarnessError::Autodiff(a) => autodiff_error(a),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<EvoError> for CliError {
    fn from(e: EvoError) -> Self {
        match e {
            EvoError::Diverged { .. } => CliError::Numeric(e.to_string()),
            EvoError::Harness(h) => h.into(),
            EvoError::Autodiff(a) => autodiff_error(a),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "metaloss",
    version,
    about = "Loss-function meta-learning toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Search for a symbolic loss by GP with gradient-based local search.
    Evolve(EvolveArgs),
    /// Learn a neural loss online, alongside the base model.
    Adapt(AdaptArgs),
    /// Train a model under a named loss or a loss artifact.
    Train(TrainArgs),
    /// Learning-rule tables and loss surfaces.
    Analyze(AnalyzeArgs),
    /// Runtime sweeps.
    Bench {
        #[command(subcommand)]
        which: BenchCommand,
    },
}

#[derive(Debug, Subcommand)]
enum BenchCommand {
    /// Per-batch time of target-only vs full label smoothing across class counts.
    SparseLsr(SparseLsrArgs),
    /// Final error over a grid of learning rates for several losses.
    LrSweep(LrSweepArgs),
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// key=value file; explicit flags win over its entries.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed (the METALOSS_SEED environment variable overrides the config file).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct TaskArgs {
    /// synth-reg, two-moons, csv:PATH:regression|classification or idx:IMAGES:LABELS.
    #[arg(long)]
    task: Option<String>,
    /// Row count for generated tasks.
    #[arg(long)]
    rows: Option<usize>,
    /// Noise level for generated tasks.
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Debug, Clone, Args)]
struct BaseArgs {
    /// Base training steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Base learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Hidden widths, comma separated; empty for a linear model.
    #[arg(long)]
    hidden: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Init {
    Gaussian,
    Unit,
}

#[derive(Debug, Args)]
struct EvolveArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    base: BaseArgs,
    /// Generations after the initial population.
    #[arg(long)]
    gens: Option<usize>,
    /// Population size.
    #[arg(long)]
    pop: Option<usize>,
    /// Keep edge weights at their initial values (plain GP).
    #[arg(long, action = ArgAction::SetTrue)]
    no_local_search: bool,
    /// Local-search steps per candidate.
    #[arg(long)]
    meta_steps: Option<usize>,
    /// Local-search learning rate.
    #[arg(long)]
    meta_lr: Option<f64>,
    /// Edge-weight initialisation.
    #[arg(long, value_enum, default_value_t = Init::Gaussian)]
    init: Init,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Offline initialisation, then lockstep adaptation.
    Online,
    /// Offline initialisation, then a frozen loss.
    Offline,
    /// Adapt the base learning rate instead of the loss.
    MetaLr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Source {
    Train,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Arch {
    SmoothLeaky,
    ReluSoftplus,
}

#[derive(Debug, Args)]
struct AdaptArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    base: BaseArgs,
    #[arg(long, value_enum, default_value_t = Mode::Online)]
    mode: Mode,
    /// Split the meta objective is measured on.
    #[arg(long, value_enum, default_value_t = Source::Train)]
    meta_source: Source,
    /// Offline meta steps.
    #[arg(long)]
    init_steps: Option<usize>,
    #[arg(long)]
    offline_lr: Option<f64>,
    #[arg(long)]
    online_lr: Option<f64>,
    /// Loss-shape snapshot cadence in steps.
    #[arg(long)]
    snapshot_every: Option<usize>,
    #[arg(long)]
    meta_hidden: Option<usize>,
    #[arg(long, value_enum, default_value_t = Arch::SmoothLeaky)]
    arch: Arch,
    /// Validation cadence in steps.
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Optimizer {
    Sgd,
    Momentum,
    Adam,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    base: BaseArgs,
    /// Named loss, e.g. ce, sparse-lsr:0.1, focal:2, squared, cauchy:1.
    #[arg(long, conflicts_with = "artifact")]
    loss: Option<String>,
    /// Loss artifact JSON written by evolve or adapt.
    #[arg(long, value_name = "FILE")]
    artifact: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Optimizer::Sgd)]
    optimizer: Optimizer,
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RegimeArg {
    /// Uniform predictions at the start of training.
    Null,
    /// Near-perfect predictions.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Regression,
    Classification,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value_t = RegimeArg::Null)]
    regime: RegimeArg,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Smoothing for the label-smoothing row.
    #[arg(long, default_value_t = 0.1)]
    xi: f64,
    /// Distance from the zero-error corner.
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    /// Also plot a loss surface: a loss name or an artifact path.
    #[arg(long)]
    surface: Option<String>,
    /// Task kind for artifact surfaces.
    #[arg(long, value_enum, default_value_t = KindArg::Classification)]
    kind: KindArg,
}

#[derive(Debug, Args)]
struct SparseLsrArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "3,10,100,1000,10000")]
    classes: String,
    #[arg(long, default_value_t = 100)]
    batch: usize,
    /// Timed repeats; the median is reported.
    #[arg(long, default_value_t = 30)]
    repeats: usize,
    /// Batch passes averaged inside each repeat.
    #[arg(long, default_value_t = 50)]
    passes: usize,
    #[arg(long, default_value_t = 0.1)]
    xi: f64,
    /// Time the shared log-sum-exp too instead of precomputing it.
    #[arg(long, action = ArgAction::SetTrue)]
    include_lse: bool,
}

#[derive(Debug, Args)]
struct LrSweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    base: BaseArgs,
    #[arg(long, default_value = "0.001,0.003,0.01,0.03,0.1,0.3,1")]
    lrs: String,
    /// Comma-separated loss names; defaults by task kind.
    #[arg(long)]
    losses: Option<String>,
    /// Training seeds per grid point.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, value_enum, default_value_t = Optimizer::Sgd)]
    optimizer: Optimizer,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn find_command<'a>(cmd: &'a clap::Command, name: &str) -> Option<&'a clap::Command> {
    cmd.get_subcommands().find_map(|c| {
        (c.get_name() == name)
            .then_some(c)
            .or_else(|| find_command(c, name))
    })
}

fn run(argv: Vec<std::ffi::OsString>) -> Result<(), CliError> {
    let root = Cli::command();
    let switches: Vec<&str> = root
        .get_subcommands()
        .flat_map(|c| std::iter::once(c).chain(c.get_subcommands()))
        .flat_map(|c| c.get_arguments())
        .filter(|a| matches!(a.get_action(), ArgAction::SetTrue))
        .filter_map(|a| a.get_long())
        .collect();
    let known = |leaf: &str, key: &str| {
        find_command(&root, leaf)
            .is_some_and(|c| c.get_arguments().any(|a| a.get_long() == Some(key)))
    };
    let argv = config::merge(argv, known, &switches)?;
    let cli = Cli::try_parse_from(argv).unwrap_or_else(|e| e.exit());
    match cli.command {
        Command::Evolve(a) => commands::evolve(a),
        Command::Adapt(a) => commands::adapt(a),
        Command::Train(a) => commands::train(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Bench { which } => match which {
            BenchCommand::SparseLsr(a) => commands::bench_sparse_lsr(a),
            BenchCommand::LrSweep(a) => commands::bench_lr_sweep(a),
        },
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
