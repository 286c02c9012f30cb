//! Experiment configuration: a versioned JSON document. Every section except
//! `model` is optional, and every field has a default that is written back
//! into the report once resolved.

use std::path::{Path, PathBuf};

use bregest::bayes_cost::MinimizeConfig;
use bregest::bregman::CmPreset;
use bregest::cm_estimator::{QuadratureConfig, SamplerConfig, SamplerMethod, MAX_QUADRATURE_DIM};
use bregest::map_solver::SolverConfig;
use bregest::model::{
    Fidelity, FidelityKind, ForwardOperator, Posterior, Prior, DEFAULT_HUBER_DELTA,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Master seed; every random stream is derived from it.
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub quadrature: QuadratureSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub operator: OperatorConfig,
    pub fidelity: FidelityKind,
    /// Observed data; exclusive with `synthetic`.
    #[serde(default)]
    pub data: Option<Vec<f64>>,
    #[serde(default)]
    pub synthetic: Option<SyntheticRecipe>,
    pub prior: PriorConfig,
    pub alpha: f64,
    #[serde(default)]
    pub poisson_floor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Identity,
    Dense,
    Convolution1d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    pub kind: OperatorKind,
    /// Signal length for `identity` and `convolution1d`.
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub kernel: Option<Vec<f64>>,
    /// Rows of a `dense` operator.
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorName {
    Tikhonov,
    HuberTv,
    L1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub kind: PriorName,
    /// Huber threshold; `huber_tv` only.
    #[serde(default)]
    pub delta: Option<f64>,
}

/// Ground truth and noise model for generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRecipe {
    pub ground_truth: Vec<f64>,
    /// Defaults to the fidelity kind.
    #[serde(default)]
    pub noise: Option<FidelityKind>,
    /// Gaussian standard deviation or Laplace scale; unused for Poisson.
    #[serde(default)]
    pub noise_level: f64,
}

/// The default tolerance is tighter than the library's: the MAP-centred form
/// check compares log-densities to 1e-8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSection {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            max_iterations: d.max_iterations,
            tolerance: 1e-12,
        }
    }
}

impl SolverSection {
    pub fn to_core(&self) -> SolverConfig {
        SolverConfig {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSection {
    /// MALA for smooth posteriors, RWM otherwise, when unset.
    pub method: Option<SamplerMethod>,
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub acceptance_window: [f64; 2],
    pub initial_scale: f64,
    pub adapt_interval: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = SamplerConfig::default();
        Self {
            method: None,
            chains: 4,
            iterations: d.iterations,
            burn_in: d.burn_in,
            thinning: d.thinning,
            acceptance_window: [d.acceptance_window.0, d.acceptance_window.1],
            initial_scale: d.initial_scale,
            adapt_interval: d.adapt_interval,
        }
    }
}

impl SamplerSection {
    pub fn to_core(&self) -> SamplerConfig {
        SamplerConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thinning: self.thinning,
            acceptance_window: (self.acceptance_window[0], self.acceptance_window[1]),
            initial_scale: self.initial_scale,
            initial: None,
            adapt_interval: self.adapt_interval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSection {
    /// 257, 129 and 65 nodes for one, two and three dimensions when unset.
    pub nodes_per_dim: Option<usize>,
    pub width: f64,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        Self {
            nodes_per_dim: None,
            width: QuadratureConfig::default().width,
        }
    }
}

impl QuadratureSection {
    pub fn default_nodes(dim: usize) -> usize {
        match dim {
            1 => 257,
            2 => 129,
            _ => 65,
        }
    }

    pub fn to_core(&self, dim: usize) -> QuadratureConfig {
        QuadratureConfig {
            nodes_per_dim: self.nodes_per_dim.unwrap_or(Self::default_nodes(dim)),
            width: self.width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    MapCentredForm,
    MapBayesOptimality,
    CmAverageOptimality,
    CmBayesOptimality,
    CompareEstimates,
}

impl CheckName {
    pub const ALL: [CheckName; 5] = [
        CheckName::MapCentredForm,
        CheckName::MapBayesOptimality,
        CheckName::CmAverageOptimality,
        CheckName::CmBayesOptimality,
        CheckName::CompareEstimates,
    ];
}

/// Where posterior expectations come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceChoice {
    /// Quadrature up to three dimensions, MCMC above.
    #[default]
    Auto,
    Quadrature,
    Mcmc,
}

/// Cost whose Bayes estimator the MAP estimate is checked to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostChoice {
    #[default]
    Map,
    C1,
    C2,
    C3,
}

impl CostChoice {
    pub fn preset(self) -> Option<CmPreset> {
        match self {
            Self::Map => None,
            Self::C1 => Some(CmPreset::C1),
            Self::C2 => Some(CmPreset::C2),
            Self::C3 => Some(CmPreset::C3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifySection {
    /// Every check that applies to the model when unset.
    pub checks: Option<Vec<CheckName>>,
    pub source: SourceChoice,
    pub centred_pairs: usize,
    pub centred_tolerance: f64,
    /// Centre of the MAP-centred form check in place of the MAP estimate.
    pub centre: Option<Vec<f64>>,
    pub perturbations: usize,
    pub map_cost: CostChoice,
    pub presets: Vec<CmPreset>,
    pub minimize: MinimizeSection,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            checks: None,
            source: SourceChoice::Auto,
            centred_pairs: 50,
            centred_tolerance: 1e-8,
            centre: None,
            perturbations: 400,
            map_cost: CostChoice::Map,
            presets: vec![CmPreset::C1, CmPreset::C2, CmPreset::C3],
            minimize: MinimizeSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizeSection {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_evaluations: usize,
}

impl Default for MinimizeSection {
    fn default() -> Self {
        let d = MinimizeConfig::default();
        Self {
            initial_step: d.initial_step,
            min_step: d.min_step,
            max_evaluations: d.max_evaluations,
        }
    }
}

impl MinimizeSection {
    pub fn to_core(&self) -> MinimizeConfig {
        MinimizeConfig {
            initial_step: self.initial_step,
            min_step: self.min_step,
            max_evaluations: self.max_evaluations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    /// `report.json`
    Json,
    /// `summary.csv`
    Csv,
    /// `chain_<k>.csv` for every sampled chain.
    Chains,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("bregest-out"),
            formats: vec![OutputFormat::Json, OutputFormat::Csv],
        }
    }
}

impl OperatorConfig {
    /// Builds the operator, or lists what is missing.
    pub fn build(&self) -> Result<ForwardOperator, Vec<String>> {
        let mut errs = Vec::new();
        let unused = |name: &str, present: bool, errs: &mut Vec<String>| {
            if present {
                errs.push(format!(
                    "model.operator.{name} does not apply to this operator kind"
                ));
            }
        };
        let op = match self.kind {
            OperatorKind::Identity => {
                unused("kernel", self.kernel.is_some(), &mut errs);
                unused("matrix", self.matrix.is_some(), &mut errs);
                match self.dim {
                    Some(n) => ForwardOperator::identity(n).map_err(|e| e.to_string()),
                    None => Err("model.operator.dim is required".into()),
                }
            }
            OperatorKind::Convolution1d => {
                unused("matrix", self.matrix.is_some(), &mut errs);
                match (self.dim, &self.kernel) {
                    (Some(n), Some(k)) => {
                        ForwardOperator::convolution1d(n, k.clone()).map_err(|e| e.to_string())
                    }
                    _ => Err("model.operator.dim and model.operator.kernel are required".into()),
                }
            }
            OperatorKind::Dense => {
                unused("kernel", self.kernel.is_some(), &mut errs);
                unused("dim", self.dim.is_some(), &mut errs);
                match &self.matrix {
                    Some(rows) if !rows.is_empty() => {
                        let cols = rows[0].len();
                        if rows.iter().any(|r| r.len() != cols) {
                            Err("model.operator.matrix rows differ in length".into())
                        } else {
                            let entries = rows.iter().flatten().copied().collect();
                            ForwardOperator::dense(rows.len(), cols, entries)
                                .map_err(|e| e.to_string())
                        }
                    }
                    _ => Err("model.operator.matrix is required and must be nonempty".into()),
                }
            }
        };
        match op {
            Ok(op) if errs.is_empty() => Ok(op),
            Ok(_) => Err(errs),
            Err(e) => {
                errs.push(if e.starts_with("model.") {
                    e
                } else {
                    format!("model.operator: {e}")
                });
                Err(errs)
            }
        }
    }
}

impl PriorConfig {
    pub fn build(&self) -> Result<Prior, String> {
        match (self.kind, self.delta) {
            (PriorName::HuberTv, d) => Prior::huber_tv(d.unwrap_or(DEFAULT_HUBER_DELTA))
                .map_err(|e| format!("model.prior: {e}")),
            (_, Some(_)) => Err("model.prior.delta applies to huber_tv only".into()),
            (PriorName::Tikhonov, None) => Ok(Prior::tikhonov()),
            (PriorName::L1, None) => Ok(Prior::l1()),
        }
    }
}

impl ModelConfig {
    /// Assembles the posterior for the given data vector.
    pub fn posterior(&self, data: Vec<f64>) -> Result<Posterior, CliError> {
        let op = self.operator.build().map_err(CliError::Invalid)?;
        let prior = self.prior.build().map_err(|e| CliError::Invalid(vec![e]))?;
        let mut fid = Fidelity::new(self.fidelity, op, data)?;
        if let Some(floor) = self.poisson_floor {
            fid = fid.with_poisson_floor(floor)?;
        }
        Ok(Posterior::new(fid, prior, self.alpha)?)
    }

    fn validate(&self, errs: &mut Vec<String>) -> Option<usize> {
        let op = match self.operator.build() {
            Ok(op) => Some(op),
            Err(e) => {
                errs.extend(e);
                None
            }
        };
        if let Err(e) = self.prior.build() {
            errs.push(e);
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            errs.push(format!("model.alpha must be positive, got {}", self.alpha));
        }
        if let Some(floor) = self.poisson_floor {
            if !(floor > 0.0 && floor.is_finite()) {
                errs.push("model.poisson_floor must be positive".into());
            }
        }
        let (m, n) = match &op {
            Some(op) => (Some(op.output_dim()), Some(op.input_dim())),
            None => (None, None),
        };
        match (&self.data, &self.synthetic) {
            (Some(_), Some(_)) => errs.push("model.data and model.synthetic are exclusive".into()),
            (None, None) => errs.push("one of model.data or model.synthetic is required".into()),
            (Some(f), None) => {
                if let Some(m) = m.filter(|&m| m != f.len()) {
                    errs.push(format!(
                        "model.data has length {} but the operator has {m} rows",
                        f.len()
                    ));
                }
                if f.iter().any(|x| !x.is_finite()) {
                    errs.push("model.data must be finite".into());
                }
                if self.fidelity == FidelityKind::Poisson && f.iter().any(|&x| x < 0.0) {
                    errs.push("model.data must be nonnegative for a Poisson fidelity".into());
                }
            }
            (None, Some(s)) => {
                if let Some(n) = n.filter(|&n| n != s.ground_truth.len()) {
                    errs.push(format!(
                        "model.synthetic.ground_truth has length {} but the operator has {n} columns",
                        s.ground_truth.len()
                    ));
                }
                if s.ground_truth.iter().any(|x| !x.is_finite()) {
                    errs.push("model.synthetic.ground_truth must be finite".into());
                }
                if !(s.noise_level >= 0.0 && s.noise_level.is_finite()) {
                    errs.push("model.synthetic.noise_level must be nonnegative".into());
                }
            }
        }
        n
    }

    pub fn is_smooth(&self) -> bool {
        self.fidelity != FidelityKind::Laplace && self.prior.kind != PriorName::L1
    }
}

impl ExperimentConfig {
    /// Semantic checks; returns every violation found.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let n = self.model.validate(&mut errs);

        let s = &self.solver;
        if s.max_iterations == 0 || !(s.tolerance > 0.0) {
            errs.push("solver.max_iterations and solver.tolerance must be positive".into());
        }

        let sm = &self.sampler;
        if sm.chains == 0 {
            errs.push("sampler.chains must be at least 1".into());
        }
        if let Err(e) = sm.to_core().validate() {
            errs.push(format!("sampler: {e}"));
        }
        if sm.method == Some(SamplerMethod::Mala) && !self.model.is_smooth() {
            errs.push("sampler.method mala needs a smooth posterior".into());
        }

        let q = &self.quadrature;
        if q.nodes_per_dim.is_some_and(|k| k < 2) || !(q.width > 0.0) {
            errs.push("quadrature.nodes_per_dim must be ≥ 2 and quadrature.width positive".into());
        }

        let v = &self.verify;
        if let Some(checks) = &v.checks {
            if checks.is_empty() {
                errs.push("verify.checks must not be empty".into());
            }
            if checks.contains(&CheckName::CmAverageOptimality)
                && self.model.fidelity == FidelityKind::Laplace
            {
                errs.push("cm_average_optimality needs a Gaussian or Poisson fidelity".into());
            }
        }
        if v.centred_pairs == 0 || v.perturbations == 0 {
            errs.push("verify.centred_pairs and verify.perturbations must be positive".into());
        }
        if !(v.centred_tolerance > 0.0) {
            errs.push("verify.centred_tolerance must be positive".into());
        }
        if v.presets.is_empty() {
            errs.push("verify.presets must not be empty".into());
        }
        if let (Some(c), Some(n)) = (&v.centre, n) {
            if c.len() != n {
                errs.push(format!(
                    "verify.centre has length {} but the model has {n} unknowns",
                    c.len()
                ));
            }
        }
        let m = &v.minimize;
        if !(m.initial_step > 0.0 && m.min_step > 0.0) || m.max_evaluations == 0 {
            errs.push("verify.minimize steps and evaluation budget must be positive".into());
        }
        if v.source == SourceChoice::Quadrature && n.is_some_and(|n| n > MAX_QUADRATURE_DIM) {
            errs.push(format!(
                "verify.source quadrature supports at most {MAX_QUADRATURE_DIM} unknowns"
            ));
        }
        errs
    }

    /// Fills every defaulted choice that depends on the model.
    pub fn resolve(mut self) -> Self {
        let smooth = self.model.is_smooth();
        self.sampler.method.get_or_insert(if smooth {
            SamplerMethod::Mala
        } else {
            SamplerMethod::Rwm
        });
        if let Ok(op) = self.model.operator.build() {
            let n = op.input_dim();
            self.quadrature
                .nodes_per_dim
                .get_or_insert(QuadratureSection::default_nodes(n));
        }
        let laplace = self.model.fidelity == FidelityKind::Laplace;
        self.verify.checks.get_or_insert_with(|| {
            CheckName::ALL
                .into_iter()
                .filter(|c| !(laplace && *c == CheckName::CmAverageOptimality))
                .collect()
        });
        self
    }
}

/// Parses and validates a configuration document.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, CliError> {
    let mut unknown = Vec::new();
    let de = &mut serde_json::Deserializer::from_str(text);
    let parsed: Result<ExperimentConfig, _> = serde_ignored::deserialize(&mut *de, |path| {
        unknown.push(format!("unknown key `{path}`"))
    });
    let parsed = parsed.and_then(|c| de.end().map(|_| c));
    match parsed {
        Err(e) => {
            unknown.push(e.to_string());
            Err(CliError::Invalid(unknown))
        }
        Ok(config) => {
            unknown.extend(config.validate());
            if unknown.is_empty() {
                Ok(config)
            } else {
                Err(CliError::Invalid(unknown))
            }
        }
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}
