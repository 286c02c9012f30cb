use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = bregest_cli::Cli::parse();
    match bregest_cli::run_cli(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
