//! `patchspn` command-line driver.

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser};

use config::RunConfig;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Lib(patchspn::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<patchspn::Error> for CliError {
    fn from(e: patchspn::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lib(e) if e.is_numerical() => 3,
            CliError::Data(_) | CliError::Lib(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "patchspn", version, about = "Patch-wise anomaly detection with autoencoder latents and sum-product networks")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: commands::Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Configuration file (TOML with [section] headers); flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output root. Defaults to [paths] output_root, then $PATCHSPN_OUT, then ./runs.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Global seed; every stage derives its own seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    cli.command.apply(&mut cfg)?;
    cfg.resolve();
    if cli.global.print_config {
        print!("{}", cfg.to_text()?);
        return Ok(());
    }
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Data(format!("thread pool: {e}")))?;
    }
    let out = cfg.output_root(cli.global.out.as_deref());
    let _lock = manifest::RunLock::acquire(&out)?;
    let ctx = commands::Context { config_text: cfg.to_text()?, cfg, out: out.clone() };
    let result = cli.command.execute(&ctx);
    if let Err(CliError::Lib(e)) = &result {
        if e.is_numerical() {
            let _ = std::fs::write(out.join("diagnostics.txt"), format!("command: {}\nerror: {e}\n\n{}", cli.command.name(), ctx.config_text));
        }
    }
    result
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
