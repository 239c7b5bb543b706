use std::process::ExitCode;

use atl_core::commands::{self, Cli};
use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match commands::run(&cli) {
        Ok(true) => commands::EXIT_OK,
        Ok(false) => {
            eprintln!("error: verification failed");
            commands::EXIT_VERIFY
        }
        Err(e) => {
            eprintln!("error: {e}");
            commands::exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
