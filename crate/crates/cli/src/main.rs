use std::process::ExitCode;

use clap::Parser;
use dynaperc_cli::{execute, Cli, CliError};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(summary) => {
            for c in summary.cells.iter().filter(|c| c.status != dynaperc_cli::runner::CellStatus::Ok) {
                eprintln!("cell {}: {:?}{}", c.cell_id, c.status, c.error.as_deref().map(|e| format!(": {e}")).unwrap_or_default());
            }
            println!("{}", summary.csv.display());
            println!("{}", summary.manifest.display());
            if summary.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e @ CliError::Config(_)) => {
            eprint!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
