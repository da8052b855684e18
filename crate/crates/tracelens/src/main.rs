use std::process::ExitCode;

use clap::Parser;
use tracelens::cli::{execute, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TRACELENS_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
