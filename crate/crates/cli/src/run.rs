//! Pipelines behind the subcommands.

use bregest::bayes_cost::SampleSource;
use bregest::bregman::CostFunctional;
use bregest::cm_estimator::{
    cm_estimate, quadrature_posterior, sample_posterior, Chain, CmEstimate, QuadratureMeasure,
    SamplerMethod, MAX_QUADRATURE_DIM,
};
use bregest::map_solver::{solve_map, MapResult};
use bregest::model::Posterior;
use bregest::rng::{StreamSeed, CHECK_STREAM_BASE, DATA_STREAM};
use bregest::verify::{
    compare_estimates, verify_cm_average_optimality, verify_cm_preset_optimality,
    verify_map_bayes_optimality, verify_map_centred_form, VerificationReport,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{CheckName, ExperimentConfig, SourceChoice};
use crate::error::CliError;
use crate::synth::synthesize_data;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Solve for the MAP estimate.
    Map,
    /// Sample the posterior and pool the chains into the CM estimate.
    Cm,
    /// Tensor-grid quadrature of the posterior (at most three unknowns).
    Oracle,
    /// Run the configured verification checks.
    Verify,
    /// Compare the prior Bregman risks of the MAP and CM estimates.
    Compare,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedRecord {
    pub master: u64,
    pub data: Option<StreamSeed>,
    pub chains: Vec<StreamSeed>,
    pub checks: Vec<StreamSeed>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainSummary {
    pub seed: StreamSeed,
    pub method: SamplerMethod,
    pub samples: usize,
    pub acceptance_rate: f64,
    pub proposal_scale: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CmSection {
    pub chains: Vec<ChainSummary>,
    pub estimate: CmEstimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSection {
    pub nodes: usize,
    pub nodes_per_axis: Vec<usize>,
    pub bounds: Vec<(f64, f64)>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub dropped_mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: Command,
    /// Resolved configuration, defaults included.
    pub config: ExperimentConfig,
    pub seeds: SeedRecord,
    pub data: Vec<f64>,
    pub map: Option<MapResult>,
    pub cm: Option<CmSection>,
    pub oracle: Option<OracleSection>,
    pub checks: Vec<VerificationReport>,
    pub passed: bool,
}

/// Output of a run: the report plus the raw chains for `chain_<k>.csv`.
#[derive(Debug)]
pub struct RunOutput {
    pub report: Report,
    pub chains: Vec<Chain>,
}

fn sample_chains(post: &Posterior, config: &ExperimentConfig) -> Result<Vec<Chain>, CliError> {
    let method = config.sampler.method.unwrap_or(SamplerMethod::Rwm);
    let cfg = config.sampler.to_core();
    let chains: Result<Vec<Chain>, _> = (0..config.sampler.chains as u64)
        .into_par_iter()
        .map(|k| sample_posterior(post, method, &cfg, StreamSeed::new(config.seed, k)))
        .collect();
    Ok(chains?)
}

fn chain_section(chains: &[Chain]) -> Result<CmSection, CliError> {
    Ok(CmSection {
        chains: chains
            .iter()
            .map(|c| ChainSummary {
                seed: c.seed,
                method: c.method,
                samples: c.len(),
                acceptance_rate: c.acceptance_rate,
                proposal_scale: c.proposal_scale,
                warning: c.warning.clone(),
            })
            .collect(),
        estimate: cm_estimate(chains, false)?,
    })
}

fn diagnostics_report(section: &CmSection) -> VerificationReport {
    let est = &section.estimate;
    let d = &est.diagnostics;
    let mut r = VerificationReport::new("chain_diagnostics");
    if let Some(rh) = d.max_r_hat() {
        r.measure("max_r_hat", rh);
    }
    r.measure("min_ess", d.min_ess())
        .tolerance("max_r_hat", bregest::cm_estimator::R_HAT_THRESHOLD);
    for (i, (m, s)) in est.mean.iter().zip(&est.stderr).enumerate() {
        r.measure(&format!("mean_{i}"), *m)
            .measure(&format!("stderr_{i}"), *s);
    }
    for (k, c) in section.chains.iter().enumerate() {
        r.measure(&format!("acceptance_{k}"), c.acceptance_rate);
        r.seeds.push(c.seed);
        if let Some(w) = &c.warning {
            r.note(format!("chain {k}: {w}"));
        }
    }
    r.passed = d.passed();
    r
}

fn oracle_section(q: &QuadratureMeasure) -> OracleSection {
    OracleSection {
        nodes: q.len(),
        nodes_per_axis: q.nodes_per_axis().to_vec(),
        bounds: q.bounds().to_vec(),
        mean: q.mean(),
        variance: q.variance(),
        dropped_mass: q.dropped_mass(),
    }
}

fn map_report(map: &MapResult, tol: f64) -> VerificationReport {
    let mut r = VerificationReport::new("map_solve");
    r.measure("residual", map.residual)
        .measure("objective", map.objective)
        .measure("iterations", map.iterations as f64)
        .tolerance("residual", tol);
    for (i, u) in map.estimate.iter().enumerate() {
        r.measure(&format!("estimate_{i}"), *u);
    }
    r.passed = map.converged;
    r
}

/// Expectations for the checks: a quadrature grid or pooled chains.
enum Source {
    Quadrature(QuadratureMeasure),
    Chains(Vec<Chain>),
}

impl Source {
    fn as_sample_source(&self) -> SampleSource<'_> {
        match self {
            Self::Quadrature(q) => SampleSource::Quadrature(q),
            Self::Chains(c) => SampleSource::Chains(c),
        }
    }
}

/// Runs `command` on a validated configuration.
pub fn run_experiment(command: Command, config: ExperimentConfig) -> Result<RunOutput, CliError> {
    let config = config.resolve();
    let (data, data_seed) = match &config.model.data {
        Some(f) => (f.clone(), None),
        None => {
            let seed = StreamSeed::new(config.seed, DATA_STREAM);
            (synthesize_data(&config.model, seed)?, Some(seed))
        }
    };
    let post = config.model.posterior(data.clone())?;
    let n = post.dim();
    let mut report = Report {
        tool: "bregest",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config: config.clone(),
        seeds: SeedRecord {
            master: config.seed,
            data: data_seed,
            chains: Vec::new(),
            checks: Vec::new(),
        },
        data,
        map: None,
        cm: None,
        oracle: None,
        checks: Vec::new(),
        passed: false,
    };
    let mut chains = Vec::new();

    match command {
        Command::Map => {
            let map = solve_map(&post, &config.solver.to_core())?;
            report
                .checks
                .push(map_report(&map, config.solver.tolerance));
            report.map = Some(map);
        }
        Command::Cm => {
            chains = sample_chains(&post, &config)?;
            let section = chain_section(&chains)?;
            report.checks.push(diagnostics_report(&section));
            report.cm = Some(section);
        }
        Command::Oracle => {
            if n > MAX_QUADRATURE_DIM {
                return Err(CliError::Unsupported(format!(
                    "quadrature supports at most {MAX_QUADRATURE_DIM} unknowns, the model has {n}"
                )));
            }
            let q = quadrature_posterior(&post, &config.quadrature.to_core(n))?;
            let mut r = VerificationReport::new("quadrature");
            r.measure("nodes", q.len() as f64)
                .measure("dropped_mass", q.dropped_mass());
            r.passed = true;
            report.checks.push(r);
            report.oracle = Some(oracle_section(&q));
        }
        Command::Verify | Command::Compare => {
            let map = solve_map(&post, &config.solver.to_core())?;
            let use_quadrature = match config.verify.source {
                SourceChoice::Auto => n <= MAX_QUADRATURE_DIM,
                SourceChoice::Quadrature => true,
                SourceChoice::Mcmc => false,
            };
            let source = if use_quadrature {
                let q = quadrature_posterior(&post, &config.quadrature.to_core(n))?;
                report.oracle = Some(oracle_section(&q));
                Source::Quadrature(q)
            } else {
                let c = sample_chains(&post, &config)?;
                let section = chain_section(&c)?;
                report.checks.push(diagnostics_report(&section));
                report.cm = Some(section);
                Source::Chains(c)
            };
            let checks = if command == Command::Compare {
                vec![CheckName::CompareEstimates]
            } else {
                config.verify.checks.clone().unwrap_or_default()
            };
            run_checks(&post, &config, &map, &source, &checks, &mut report)?;
            report.map = Some(map);
            if let Source::Chains(c) = source {
                chains = c;
            }
        }
    }
    report.seeds.chains = chains.iter().map(|c| c.seed).collect();
    report.passed = report.checks.iter().all(|c| c.passed);
    Ok(RunOutput { report, chains })
}

fn run_checks(
    post: &Posterior,
    config: &ExperimentConfig,
    map: &MapResult,
    source: &Source,
    checks: &[CheckName],
    report: &mut Report,
) -> Result<(), CliError> {
    let v = &config.verify;
    let src = source.as_sample_source();
    let m = &map.estimate;
    for (k, check) in checks.iter().enumerate() {
        let seed = StreamSeed::new(config.seed, CHECK_STREAM_BASE + k as u64);
        match check {
            CheckName::MapCentredForm => {
                let centre = v.centre.as_deref().unwrap_or(m);
                let r = verify_map_centred_form(
                    post,
                    centre,
                    v.centred_pairs,
                    v.centred_tolerance,
                    seed,
                )?;
                report.seeds.checks.push(seed);
                report.checks.push(r);
            }
            CheckName::MapBayesOptimality => {
                let cost = v
                    .map_cost
                    .preset()
                    .map(|p| CostFunctional::cm_preset(post, p));
                let r = verify_map_bayes_optimality(
                    post,
                    m,
                    &src,
                    v.perturbations,
                    cost.as_ref(),
                    seed,
                )?;
                report.seeds.checks.push(seed);
                report.checks.push(r);
            }
            CheckName::CmAverageOptimality => {
                report
                    .checks
                    .push(verify_cm_average_optimality(post, &src)?);
            }
            CheckName::CmBayesOptimality => {
                let cfg = v.minimize.to_core();
                for preset in &v.presets {
                    report
                        .checks
                        .push(verify_cm_preset_optimality(post, *preset, &src, m, &cfg)?);
                }
            }
            CheckName::CompareEstimates => {
                let cm = bregest::verify::source_mean(&src)?.0;
                report.checks.push(compare_estimates(post, m, &cm, &src)?);
            }
        }
    }
    Ok(())
}
