mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use crate::commands::{Failure, Run};
use crate::config::Config;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Train,
    Eval,
    Verify,
    Decompose,
    Params,
}

/// Permutation-invariant set learning: training, evaluation, property
/// verification, tensor decomposition and parameter reports.
#[derive(Debug, Parser)]
#[command(name = "pinset", version)]
struct Args {
    command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "pinset-out")]
    out: PathBuf,
    /// Overrides one configuration entry; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn load(args: &Args) -> Result<Config, Failure> {
    let mut cfg = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    for spec in &args.overrides {
        cfg.apply_override(spec)?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = load(&args).and_then(|cfg| {
        let run = Run {
            config: cfg,
            seed: args.seed,
            out: args.out.clone(),
        };
        commands::dispatch(args.command, &run)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
