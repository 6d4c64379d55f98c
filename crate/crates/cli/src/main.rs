//! `sanode`: generate trajectory data, train SA/vanilla fields, evaluate them, and
//! run transport experiments.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numeric failure, 4 I/O.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) | CliError::Io(m) => m,
        }
    }
}

impl From<sanode::Error> for CliError {
    fn from(e: sanode::Error) -> Self {
        use sanode::Error as E;
        let msg = e.to_string();
        match e {
            E::Blowup { .. } | E::Diverged { .. } | E::Sampler { .. } => CliError::Numeric(msg),
            E::Io { .. } | E::Corrupt { .. } | E::Version { .. } => CliError::Io(msg),
            _ => CliError::Usage(msg),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "sanode", version, about = "Semi-autonomous neural ODE experiments")]
struct Cli {
    /// Config file of `section.key = value` lines; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate a system from a grid of initial points and write the dataset.
    Generate(GenerateArgs),
    /// Fit a network field to a dataset.
    Train(TrainArgs),
    /// Error curves of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Error/DoF table across checkpoints.
    Compare(CompareArgs),
    /// Learn a transport field from characteristics and reconstruct densities.
    Transport(TransportArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Built-in system [default: dissipative].
    #[arg(long)]
    pub system: Option<String>,
    /// Field definition file (`d=<n>` then one expression per component); overrides --system.
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Lower end of the initial-point grid [default: -2].
    #[arg(long, allow_negative_numbers = true)]
    pub lo: Option<f64>,
    /// Upper end of the initial-point grid [default: 2].
    #[arg(long, allow_negative_numbers = true)]
    pub hi: Option<f64>,
    /// Grid nodes per axis [default: 9].
    #[arg(long)]
    pub count: Option<usize>,
    /// Start time [default: 0].
    #[arg(long, allow_negative_numbers = true)]
    pub t0: Option<f64>,
    /// Final time [default: 5, or 4 for doswell].
    #[arg(long)]
    pub t1: Option<f64>,
    /// Time step [default: 0.05].
    #[arg(long)]
    pub dt: Option<f64>,
    /// Seed of the train/test split [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output: a directory gets CSV files, a path with an extension the binary format.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset (CSV directory or binary file).
    pub dataset: PathBuf,
    /// sa or vanilla [default: sa].
    #[arg(long)]
    pub model: Option<String>,
    /// Neurons per network [default: 100].
    #[arg(long = "P", alias = "width")]
    pub width: Option<usize>,
    /// relu or sigmoid [default: relu].
    #[arg(long)]
    pub activation: Option<String>,
    /// Fix the time weights at zero (SA only).
    #[arg(long)]
    pub autonomous: bool,
    /// [default: 3000]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam step size [default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Regularization weight [default: 1e-5].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Initialization seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// discrete or adjoint [default: discrete].
    #[arg(long)]
    pub grad: Option<String>,
    /// Checkpoint encoding, binary or text [default: binary].
    #[arg(long)]
    pub format: Option<String>,
    /// Resume from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output directory [default: run].
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    /// Output directory [default: eval].
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Dataset every checkpoint is evaluated on.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Output directory [default: compare].
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TransportArgs {
    /// transport-sin or doswell [default: transport-sin].
    #[arg(long)]
    pub system: Option<String>,
    /// Field definition file used as the true velocity; overrides --system.
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Use this trained SA checkpoint instead of training.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Profile the L1 "train" curve is computed for [default: gaussian:1, or tanh:1 for doswell].
    #[arg(long)]
    pub train_rho: Option<String>,
    /// Profile of the L1 "test" curve [default: gaussian:4, or tanh:10 for doswell].
    #[arg(long)]
    pub test_rho: Option<String>,
    /// Characteristic starting points: lower end [default: -4].
    #[arg(long, allow_negative_numbers = true)]
    pub data_lo: Option<f64>,
    /// Upper end [default: 4].
    #[arg(long, allow_negative_numbers = true)]
    pub data_hi: Option<f64>,
    /// Nodes per axis [default: 11].
    #[arg(long)]
    pub data_count: Option<usize>,
    /// Final time [default: 5, or 4 for doswell].
    #[arg(long)]
    pub t1: Option<f64>,
    /// Step of the training trajectories [default: 0.1].
    #[arg(long)]
    pub dt: Option<f64>,
    /// [default: 100]
    #[arg(long = "P", alias = "width")]
    pub width: Option<usize>,
    /// relu or sigmoid [default: sigmoid].
    #[arg(long)]
    pub activation: Option<String>,
    /// [default: 10000]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 1e-5]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Density grid half-width: the grid is [-L, L]^2 [default: 4].
    #[arg(long)]
    pub grid_half_width: Option<f64>,
    /// Density grid nodes per axis [default: 81].
    #[arg(long)]
    pub grid_n: Option<usize>,
    /// Number of evenly spaced evaluation times on [0, t1] [default: 11].
    #[arg(long)]
    pub times: Option<usize>,
    /// RK4 step along characteristics [default: 0.05].
    #[arg(long)]
    pub char_dt: Option<f64>,
    /// Empirical W1 series with this many points (0 = off) [default: 0].
    #[arg(long)]
    pub w1: Option<usize>,
    /// Output directory [default: transport].
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("SANODE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("SANODE_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Generate(a) => commands::generate(a, cfg),
        Command::Train(a) => commands::train(a, cfg),
        Command::Eval(a) => commands::eval(a, cfg),
        Command::Compare(a) => commands::compare(a, cfg),
        Command::Transport(a) => commands::transport(a, cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
