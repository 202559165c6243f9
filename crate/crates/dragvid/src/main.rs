use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dragvid::cli;
use dragvid::config::parse_config;

#[derive(Parser)]
#[command(name = "dragvid", about = "Point-based video drag editing", version)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full drag pipeline from a config file.
    Run { config: PathBuf },
    /// Render the configured scene without optimizing.
    Render { config: PathBuf },
    /// Temporal smoothness of an edited frame directory against its input.
    Metric {
        input_dir: PathBuf,
        edited_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        window: usize,
        #[arg(long, default_value_t = 4)]
        search: usize,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = match args.command {
        Command::Run { config } => parse_config(&config).and_then(|c| cli::run_command(&c).map(|_| ())),
        Command::Render { config } => parse_config(&config).and_then(|c| cli::render_command(&c)),
        Command::Metric {
            input_dir,
            edited_dir,
            window,
            search,
        } => cli::metric_command(&input_dir, &edited_dir, window, search).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
