//! Experiment runner for the `bregest` estimators. A JSON configuration drives
//! the `map | cm | oracle | verify | compare` pipelines, which write JSON/CSV
//! reports.

pub mod config;
pub mod error;
pub mod output;
pub mod run;
pub mod synth;

use std::path::PathBuf;

pub use config::{parse_config, parse_config_str, ExperimentConfig};
pub use error::{CliError, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_PASS, EXIT_RUNTIME};
pub use run::{run_experiment, Command, Report, RunOutput};
pub use synth::synthesize_data;

#[derive(Debug, clap::Parser)]
#[command(
    name = "bregest",
    version,
    about = "MAP and CM estimation with Bregman-cost verification"
)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Runs one command end to end and returns the process exit code.
pub fn run_cli(cli: &Cli) -> Result<u8, CliError> {
    let mut config = parse_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output.directory = out.clone();
    }
    let run = run_experiment(cli.command, config)?;
    let out = &run.report.config.output;
    output::write_outputs(&run, &out.directory, &out.formats)?;
    for c in &run.report.checks {
        eprintln!("{:<28} {}", c.name, if c.passed { "pass" } else { "FAIL" });
    }
    Ok(if run.report.passed {
        EXIT_PASS
    } else {
        EXIT_CHECK_FAILED
    })
}
