//! `gnelf` command-line tool: train, render, eval, ablate, gen-toy and serve.

pub mod commands;
pub mod serve;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or paths.
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<gnelf_core::Error> for CliError {
    fn from(e: gnelf_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "gnelf", version, about = "Grid-based neural light field tools")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// TOML config; `name` picks the base preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted `key=value` override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially and deterministically.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, global = true, default_value_t = 1, value_parser = parse_scale)]
    pub scale: usize,
}

fn parse_scale(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v @ (1 | 2 | 4 | 8)) => Ok(v),
        _ => Err(format!("scale must be one of 1, 2, 4, 8 (got {s})")),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a dataset directory.
    Train(commands::TrainArgs),
    /// Render one view from a checkpoint.
    Render(commands::RenderArgs),
    /// PSNR/SSIM of a checkpoint on a dataset split.
    Eval(commands::EvalArgs),
    /// Level-masking ablation table.
    Ablate(commands::AblateArgs),
    /// Write a procedural toy dataset in Blender format.
    GenToy(commands::GenToyArgs),
    /// HTTP render service.
    Serve(serve::ServeArgs),
}

/// Parses `argv` and runs the subcommand. Returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cli: Cli) -> CliResult {
    if cli.global.threads == 0 {
        return Err(CliError::Usage("--threads must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    let g = cli.global;
    match cli.command {
        Command::Train(a) => pool.install(|| commands::cmd_train(&g, &a)),
        Command::Render(a) => pool.install(|| commands::cmd_render(&g, &a)),
        Command::Eval(a) => pool.install(|| commands::cmd_eval(&g, &a)),
        Command::Ablate(a) => pool.install(|| commands::cmd_ablate(&g, &a)),
        Command::GenToy(a) => commands::cmd_gen_toy(&g, &a),
        Command::Serve(a) => serve::cmd_serve(&g, &a, pool),
    }
}
