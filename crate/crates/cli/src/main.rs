use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hoqs_core::pqc::KemParamSet;
use hoqs_core::protocol::Transport;
use hoqs_core::{ErrorCountRule, GridPreset, PeType};

mod commands;
mod config;

use config::{FileConfig, CONFIG_ENV};

#[derive(Debug, Parser)]
#[command(name = "hoqs", version, about = "Finite-key optimizer and hybrid QKD/PQC cycle simulator")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Master seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write CSV here instead of stdout.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Maximize the key length for one parameter set.
    Optimize(OptimizeArgs),
    /// Run all three bounds at the reference point and compare with the published values.
    Table1(Table1Args),
    /// Simulate one full cycle.
    Cycle(CycleArgs),
    /// Run consecutive cycles and report the aggregate key rate.
    Batch(BatchArgs),
    /// Batch runs across several n_obs values.
    SweepNobs(SweepArgs),
    /// Ciphertext growth of the cascade and of the public-key layered variant.
    SizeModel(SizeModelArgs),
    /// Plot data and config templates.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct ParamArgs {
    #[arg(long)]
    pub s: Option<u32>,
    /// Raw sifted bits.
    #[arg(long = "N")]
    pub raw_bits: Option<u64>,
    /// Syndrome length r.
    #[arg(long)]
    pub r: Option<u64>,
    /// Number of MAC tags q.
    #[arg(long)]
    pub q: Option<u32>,
    /// MAC tag length p.
    #[arg(long)]
    pub p: Option<u32>,
    #[arg(long)]
    pub pe: Option<PeType>,
    #[arg(long)]
    pub grid: Option<GridPreset>,
    /// Error-count convention for the CP bound.
    #[arg(long)]
    pub cp_count: Option<ErrorCountRule>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Table1Args {
    #[arg(long, default_value_t = 6)]
    pub s: u32,
    #[arg(long, default_value = "full")]
    pub grid: GridPreset,
    #[arg(long, default_value = "derived")]
    pub cp_count: ErrorCountRule,
}

#[derive(Debug, Clone, Args, Default)]
pub struct CycleArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long)]
    pub nobs: Option<u32>,
    /// Simulated channel QBER.
    #[arg(long)]
    pub qber: Option<f64>,
    #[arg(long)]
    pub kem: Option<KemParamSet>,
    #[arg(long)]
    pub message: Option<String>,
    #[arg(long)]
    pub transport: Option<Transport>,
    #[arg(long)]
    pub psk_seed: Option<u64>,
    #[arg(long)]
    pub max_nobs: Option<u32>,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    #[command(flatten)]
    pub cycle: CycleArgs,
    #[arg(long)]
    pub cycles: Option<u32>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub cycle: CycleArgs,
    #[arg(long, value_delimiter = ',', default_value = "2,4,6")]
    pub nobs_list: Vec<u32>,
    #[arg(long)]
    pub cycles: Option<u32>,
}

#[derive(Debug, Args)]
pub struct SizeModelArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10")]
    pub nobs_list: Vec<u32>,
    /// Message length; defaults to the built-in sample message.
    #[arg(long)]
    pub msg_bytes: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportKind {
    /// Key length against the deviation for one bound.
    NuScan,
    /// A config file with every key at its default.
    Config,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(value_enum)]
    pub what: ExportKind,
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long)]
    pub delta: Option<f64>,
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Infeasible(String),
    Validation(String),
    Tolerance(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Infeasible(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Tolerance(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Infeasible(m) | CliError::Validation(m) | CliError::Tolerance(m) | CliError::Io(m) => m,
        }
    }
}

pub struct Context {
    pub file: FileConfig,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path).map_err(CliError::Validation)?,
        None => FileConfig::default(),
    };
    let ctx = Context { file, seed: cli.seed, out: cli.out };
    match cli.command {
        Command::Optimize(a) => commands::optimize(&ctx, &a),
        Command::Table1(a) => commands::table1(&ctx, &a),
        Command::Cycle(a) => commands::cycle(&ctx, &a),
        Command::Batch(a) => commands::batch(&ctx, &a),
        Command::SweepNobs(a) => commands::sweep_nobs(&ctx, &a),
        Command::SizeModel(a) => commands::size_model(&ctx, &a),
        Command::Export(a) => commands::export(&ctx, &a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(3);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
