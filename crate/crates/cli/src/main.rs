//! `sigvwap` command-line driver.

mod commands;
mod curves;
mod settings;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "sigvwap", version, about = "Signature-conditioned dynamic VWAP execution")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// `key = value` experiment config file.
    #[arg(long, global = true, env = "SIGVWAP_CONFIG")]
    pub config: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long, global = true, env = "SIGVWAP_SEED")]
    pub seed: Option<u64>,
    /// Hyperparameter profile (tiny or full).
    #[arg(long, global = true, env = "SIGVWAP_PROFILE", default_value = "tiny")]
    pub profile: String,
    /// Model variant (AFD, GFD, GFT, GFT-Sig).
    #[arg(long, global = true, env = "SIGVWAP_VARIANT")]
    pub variant: Option<String>,
    /// Upper bound on parallel worker threads; 0 uses every core.
    #[arg(long, global = true, env = "SIGVWAP_WORKERS")]
    pub workers: Option<usize>,
    /// Output root directory.
    #[arg(long, global = true, env = "SIGVWAP_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Config override `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic market as raw bar files.
    Synth(commands::SynthArgs),
    /// Normalize raw bar files into prepared series with metadata sidecars.
    Prepare(commands::PrepareArgs),
    /// Train the configured variant on prepared series.
    Train(commands::TrainArgs),
    /// Score trained checkpoints against the naive split.
    Evaluate(commands::EvaluateArgs),
    /// Rebuild report tables from stored per-sample losses.
    Report(commands::ReportArgs),
    /// Export predicted allocation curves.
    Backtest(commands::BacktestArgs),
    /// Split coarse allocation bins into finer ones.
    Refine(commands::RefineArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use sigvwap::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidAllocation(_) | E::NonFinite(_) | E::Shape { .. } | E::Diverged { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}


fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
