//! `report.json`, `summary.csv` and `chain_<k>.csv` writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bregest::cm_estimator::Chain;
use bregest::verify::VerificationReport;

use crate::config::OutputFormat;
use crate::error::CliError;
use crate::run::RunOutput;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CliError::Write {
            path: path.to_path_buf(),
            source,
        })
}

fn join_map(map: &std::collections::BTreeMap<String, f64>) -> String {
    map.iter()
        .map(|(k, v)| format!("{k}={v:?}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_summary<W: Write>(checks: &[VerificationReport], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "check",
        "passed",
        "measured",
        "tolerances",
        "seeds",
        "notes",
    ])?;
    for c in checks {
        let seeds = c
            .seeds
            .iter()
            .map(|s| format!("{}:{}", s.master, s.stream))
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            c.name.as_str(),
            if c.passed { "true" } else { "false" },
            &join_map(&c.measured),
            &join_map(&c.tolerances),
            &seeds,
            &c.notes.join(" | "),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_chain<W: Write>(chain: &Chain, out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..chain.dim()).map(|i| format!("u_{i}")))?;
    for s in chain.samples() {
        w.write_record(s.iter().map(|x| x.to_string()))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes the requested formats into `dir` and returns the files written.
pub fn write_outputs(
    run: &RunOutput,
    dir: &Path,
    formats: &[OutputFormat],
) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    if formats.contains(&OutputFormat::Json) {
        let path = dir.join("report.json");
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, &run.report)?;
        w.flush().map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    if formats.contains(&OutputFormat::Csv) {
        let path = dir.join("summary.csv");
        write_summary(&run.report.checks, create(&path)?)?;
        written.push(path);
    }
    if formats.contains(&OutputFormat::Chains) {
        for (k, chain) in run.chains.iter().enumerate() {
            let path = dir.join(format!("chain_{k}.csv"));
            write_chain(chain, create(&path)?)?;
            written.push(path);
        }
    }
    Ok(written)
}
