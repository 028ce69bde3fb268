use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use riskctl::{run_file, validate_file, CliError};

#[derive(Parser)]
#[command(name = "riskctl", version, about = "Run risk-measure experiments from JSON configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task of a config and write its artifacts.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Parse and build a config without running it.
    Validate { config: PathBuf },
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RISKCTL_LOG", "warn"))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed, jobs } => {
            if let Some(k) = jobs {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global() {
                    error!("could not size the thread pool: {e}");
                }
            }
            run_file(&config, out, seed).map(|(dir, report)| {
                println!("wrote {} task(s) to {}", report.tasks.len(), dir.display());
            })
        }
        Command::Validate { config } => validate_file(&config).map(|()| println!("ok")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("riskctl: {e}");
            ExitCode::from(exit_byte(&e))
        }
    }
}

fn exit_byte(e: &CliError) -> u8 {
    e.exit_code() as u8
}
