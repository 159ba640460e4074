//! `redi` command-line front end.

use std::ffi::OsString;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

pub use config::{load_train_config, TrainOverrides};

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "redi", version, about = "Recover-then-discriminate anomaly detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a seeded synthetic corpus in MVTec layout.
    Synth(commands::synth::Args),
    /// Render the HOG image of a PNG.
    RenderHog(commands::hog::Args),
    /// Train the image recovery network.
    TrainRecover(commands::train::RecoverArgs),
    /// Train the feature recovery block on top of a recovery checkpoint.
    TrainDisc(commands::train::DiscArgs),
    /// Score images and write anomaly maps.
    Infer(commands::infer::Args),
    /// Evaluate a model on a corpus' test split.
    Eval(commands::eval::Args),
    /// Check analytic gradients against finite differences.
    Gradcheck(commands::gradcheck::Args),
}

/// Exit code for an error: numeric failures 2, I/O 3, everything else 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<redi_core::Error>() {
            return match e {
                redi_core::Error::NonFinite { .. } => EXIT_NUMERIC,
                redi_core::Error::Io { .. } => EXIT_IO,
                _ => EXIT_USAGE,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_USAGE
}

fn init_threads() -> anyhow::Result<()> {
    let threads = match std::env::var("REDI_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| anyhow::anyhow!("REDI_THREADS must be a non-negative integer, got '{v}'"))?,
        Err(_) => 0,
    };
    #[cfg(feature = "parallel")]
    if threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth::run(a),
        Command::RenderHog(a) => commands::hog::run(a),
        Command::TrainRecover(a) => commands::train::run_recover(a),
        Command::TrainDisc(a) => commands::train::run_disc(a),
        Command::Infer(a) => commands::infer::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Gradcheck(a) => commands::gradcheck::run(a),
    }
}

/// Parse, run and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            if let Some(commands::Failed(code)) = e.downcast_ref::<commands::Failed>() {
                eprintln!("{e}");
                return *code;
            }
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
