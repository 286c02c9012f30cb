#![allow(dead_code)]

use std::path::{Path, PathBuf};

use bregest::map_solver::{solve_map, SolverConfig};
use bregest::model::Posterior;
use bregest_cli::parse_config;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture_path(name: &str) -> PathBuf {
    fixtures_dir().join(format!("{name}.json"))
}

/// Posterior of a shipped fixture with explicit data.
pub fn fixture(name: &str) -> Posterior {
    let cfg = parse_config(&fixture_path(name)).unwrap();
    let data = cfg.model.data.clone().expect("fixture has explicit data");
    cfg.model.posterior(data).unwrap()
}

/// Shipped fixture files, sorted, excluding the expected failures.
pub fn shipped(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
}

pub fn map(post: &Posterior) -> Vec<f64> {
    let cfg = SolverConfig {
        tolerance: 1e-12,
        ..SolverConfig::default()
    };
    solve_map(post, &cfg).unwrap().estimate
}
