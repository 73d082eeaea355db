//! `vesiclecc <mode> --config <path> [--set key=value]...`

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{Mode, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "vesiclecc", version, about = "Phase-field vesicle solver")]
struct Cli {
    mode: Mode,
    /// Flat TOML configuration file; omitted keys use the growth defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set n=128`. Repeatable; applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn init_threads() {
    let Ok(raw) = std::env::var("VESICLECC_THREADS") else {
        return;
    };
    match raw.trim().parse::<usize>() {
        Ok(k) if k > 0 => {
            #[cfg(feature = "parallel")]
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
                log::warn!("could not size thread pool: {e}");
            }
            #[cfg(not(feature = "parallel"))]
            log::info!("VESICLECC_THREADS={k} ignored in the sequential build");
        }
        _ => log::warn!("ignoring VESICLECC_THREADS={raw:?}"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    init_threads();
    let cfg = match RunConfig::load(cli.config.as_deref(), &cli.set) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    match run::run(cli.mode, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
