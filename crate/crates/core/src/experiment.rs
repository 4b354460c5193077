//! Experiment configuration, validation and the sweep runner behind the CLI.
//!
//! A configuration is a TOML document. One output row is produced per
//! (λ, η) grid point, in λ-major order, with the column set of [`COLUMNS`].

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::activations::{moments, Activation, ActivationError, ActivationMoments, ActivationName, DEFAULT_ORDER};
use crate::ensemble::{mean_se, run_trial, EmpiricalRun, EnsembleError, EnsembleKind, Formulation, GenMode, TrialSetup};
use crate::losses::{LossKind, LossSpec, Task};
use crate::predict::{predict, PhiHat, PhiHatName};
use crate::saddle::{SaddleConfig, SaddleProblem, SaddleSolution, TStar, Tolerances};
use crate::spectral::{read_eigenvalues, SpectralLaw};
use crate::teacher::{Phi, TeacherSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Theory,
    Empirical,
    Both,
}

impl Engine {
    pub fn theory(self) -> bool {
        matches!(self, Engine::Theory | Engine::Both)
    }
    pub fn empirical(self) -> bool {
        matches!(self, Engine::Empirical | Engine::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeacherName {
    Identity,
    Relu,
    Sign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    pub phi: TeacherName,
    #[serde(default = "one")]
    pub rho: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub p: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

fn default_ensemble() -> EnsembleKind {
    EnsembleKind::GaussianIid
}
fn default_engine() -> Engine {
    Engine::Both
}
fn default_gen_mode() -> GenMode {
    GenMode::ClosedFormOverlap
}
fn default_formulations() -> Vec<Formulation> {
    vec![Formulation::Feature]
}
fn default_trials() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub task: Task,
    pub teacher: TeacherConfig,
    pub activation: ActivationName,
    pub loss: LossKind,
    /// Prediction map; identity for regression and sign for classification when absent.
    pub phi_hat: Option<PhiHatName>,
    pub lambda: OneOrMany,
    pub alpha: f64,
    /// η grid; the default grid when absent.
    pub eta: Option<Vec<f64>>,
    #[serde(default = "default_ensemble")]
    pub ensemble: EnsembleKind,
    /// Eigenvalue file for the theory law; required with a file-based ensemble.
    pub eigenvalues: Option<PathBuf>,
    pub n: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_engine")]
    pub engine: Engine,
    #[serde(default = "default_gen_mode")]
    pub gen_mode: GenMode,
    #[serde(default = "default_formulations")]
    pub formulations: Vec<Formulation>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Diagnostics {
    pub errors: Vec<Diagnostic>,
    pub warnings: Vec<Diagnostic>,
}

impl Diagnostics {
    fn error(&mut self, field: &str, message: impl Into<String>) {
        self.errors.push(Diagnostic { field: field.into(), message: message.into() });
    }
    fn warn(&mut self, field: &str, message: impl Into<String>) {
        self.warnings.push(Diagnostic { field: field.into(), message: message.into() });
    }
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
}

/// 12 log-spaced points in [0.05, 0.7], 11 points with step 0.05 in
/// [0.75, 1.25] and 7 log-spaced points up to 4.
pub fn default_eta_grid() -> Vec<f64> {
    let mut g = Vec::with_capacity(30);
    for i in 0..12 {
        g.push(0.05 * 14f64.powf(i as f64 / 11.0));
    }
    for i in 0..11 {
        g.push(0.75 + 0.05 * i as f64);
    }
    for i in 1..=7 {
        g.push(1.25 * 3.2f64.powf(i as f64 / 7.0));
    }
    g
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads a config file. Relative data-file paths inside it are taken
    /// relative to the file's directory.
    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(std::path::Path::new(""));
        if let Some(p) = cfg.eigenvalues.as_mut() {
            *p = base.join(&*p);
        }
        if let EnsembleKind::FromFile { path } = &mut cfg.ensemble {
            *path = base.join(&*path);
        }
        Ok(cfg)
    }

    pub fn eta_grid(&self) -> Vec<f64> {
        self.eta.clone().unwrap_or_else(default_eta_grid)
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.lambda.values()
    }

    pub fn phi_hat(&self) -> PhiHat {
        match (self.phi_hat, self.task) {
            (Some(p), _) => p.into(),
            (None, Task::Regression) => PhiHat::Identity,
            (None, Task::Classification) => PhiHat::Sign,
        }
    }

    pub fn teacher_spec(&self) -> TeacherSpec {
        let phi = match self.teacher.phi {
            TeacherName::Identity => Phi::Identity,
            TeacherName::Relu => Phi::Relu,
            TeacherName::Sign => Phi::SignFlip { p: self.teacher.p },
        };
        TeacherSpec { phi, rho: self.teacher.rho, delta_noise: self.teacher.delta, task: self.task }
    }

    pub fn activation(&self) -> Activation {
        self.activation.into()
    }

    /// Hex SHA-256 of the canonical JSON form of the configuration, leaving
    /// out where and how the output is written.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig { output: OutputConfig::default(), ..self.clone() };
        let json = serde_json::to_string(&canonical).unwrap_or_default();
        let digest = Sha256::digest(json.as_bytes());
        let mut s = String::with_capacity(64);
        for b in digest {
            let _ = write!(s, "{b:02x}");
        }
        s
    }

    /// Theory law at asymptotic ratio δ = αη.
    pub fn law(&self, eta: f64, eigs: Option<&[f64]>) -> Result<SpectralLaw, String> {
        let delta = self.alpha * eta;
        let r = match (&self.ensemble, eigs) {
            (_, Some(e)) => SpectralLaw::empirical(e.to_vec(), delta),
            (EnsembleKind::GaussianIid, None) => SpectralLaw::marchenko_pastur(delta),
            (EnsembleKind::RandomOrthogonal, None) => SpectralLaw::orthogonal(delta),
            (EnsembleKind::FromFile { .. }, None) => return Err("file ensemble needs an eigenvalue file".into()),
        };
        r.map_err(|e| e.to_string())
    }

    /// Field-level checks. Errors block a run; warnings are reported.
    pub fn validate(&self) -> Diagnostics {
        let mut d = Diagnostics::default();
        if self.schema_version != SCHEMA_VERSION {
            d.error("schema_version", format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            d.error("alpha", format!("must be positive, got {}", self.alpha));
        }
        let grid = self.eta_grid();
        if grid.is_empty() {
            d.error("eta", "grid is empty");
        }
        if grid.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            d.error("eta", "grid values must be positive");
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            d.error("eta", "grid must be strictly increasing");
        }
        let lambdas = self.lambdas();
        if lambdas.is_empty() || lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            d.error("lambda", "values must be positive");
        }
        if self.trials < 1 {
            d.error("trials", "must be at least 1");
        }
        if self.n < 1 {
            d.error("n", "must be at least 1");
        }
        if self.formulations.is_empty() {
            d.error("formulations", "at least one formulation is required");
        }
        if let GenMode::FreshSamples { samples } = self.gen_mode {
            if samples < 2 {
                d.error("gen_mode.samples", "needs at least 2 samples");
            }
        }
        let t = &self.teacher;
        if !(t.rho > 0.0 && t.rho.is_finite()) {
            d.error("teacher.rho", format!("must be positive, got {}", t.rho));
        }
        if !(t.delta >= 0.0 && t.delta.is_finite()) {
            d.error("teacher.delta", format!("must be nonnegative, got {}", t.delta));
        }
        if !(0.0..=0.5).contains(&t.p) {
            d.error("teacher.p", format!("flip probability {} is outside [0, 1/2]", t.p));
        }
        match (self.task, t.phi) {
            (Task::Regression, TeacherName::Sign) => d.error("teacher.phi", "sign teacher requires the classification task"),
            (Task::Classification, TeacherName::Identity | TeacherName::Relu) => {
                d.error("teacher.phi", "classification requires the sign teacher")
            }
            _ => {}
        }
        if self.task == Task::Classification && t.delta != 0.0 {
            d.error("teacher.delta", "classification labels are noiseless signs; use p for label noise");
        }
        if let Err(e) = LossSpec::new(self.loss, self.task) {
            d.error("loss", e.to_string());
        }
        if self.task == Task::Classification && !self.teacher_spec().labels_have_both_signs() {
            d.error("teacher", "labels must take both signs with positive probability");
        }
        match moments(&self.activation(), DEFAULT_ORDER) {
            Err(ActivationError::NonPositiveMu1(_)) => d.error("activation", "E[zσ(z)] must be positive"),
            Err(e) => d.error("activation", e.to_string()),
            Ok(_) => {}
        }
        if matches!(self.loss, LossKind::Hinge | LossKind::Lad) && !self.activation().is_odd() {
            d.warn(
                "loss",
                format!("{:?} loss is not strongly convex and {:?} is not odd; the asymptotic predictions are not guaranteed", self.loss, self.activation),
            );
        }
        let eigs = match (&self.ensemble, &self.eigenvalues) {
            (_, Some(p)) => match read_eigenvalues(p) {
                Ok(e) => Some(e),
                Err(e) => {
                    d.error("eigenvalues", e.to_string());
                    None
                }
            },
            (EnsembleKind::FromFile { .. }, None) if self.engine.theory() => {
                d.error("eigenvalues", "the theory engine needs an eigenvalue file with a file-based ensemble");
                None
            }
            _ => None,
        };
        if let EnsembleKind::FromFile { path } = &self.ensemble {
            if self.engine.empirical() && !path.exists() {
                d.error("ensemble.path", format!("{} does not exist", path.display()));
            }
        }
        if self.engine.theory() && d.errors.is_empty() {
            for &eta in &grid {
                match self.law(eta, eigs.as_deref()) {
                    Ok(l) if !l.satisfies_support_assumption() => d.warn(
                        "eta",
                        format!("spectral law at η = {eta} has support [{}, {}] touching zero", l.kappa_min, l.kappa_max),
                    ),
                    Err(e) => d.error("eta", format!("law at η = {eta}: {e}")),
                    _ => {}
                }
            }
        }
        d
    }
}

/// Aggregated empirical statistics of one formulation at one grid point.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EmpiricalSummary {
    pub train_mean: Option<f64>,
    pub train_se: Option<f64>,
    pub gen_mean: Option<f64>,
    pub gen_se: Option<f64>,
    pub q_hat: Option<f64>,
    pub beta_hat: Option<f64>,
    pub theta_hat: Option<f64>,
    pub trials_ok: usize,
    pub trials_failed: usize,
    pub trials_stalled: usize,
}

fn opt(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl EmpiricalSummary {
    pub fn from_runs(runs: &[&EmpiricalRun], failed: usize) -> Self {
        let col = |f: fn(&EmpiricalRun) -> f64| runs.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let (tm, ts) = mean_se(&col(|r| r.train_error));
        let (gm, gs) = mean_se(&col(|r| r.gen_error));
        EmpiricalSummary {
            train_mean: opt(tm),
            train_se: opt(ts),
            gen_mean: opt(gm),
            gen_se: opt(gs),
            q_hat: opt(mean_se(&col(|r| r.q_hat)).0),
            beta_hat: opt(mean_se(&col(|r| r.beta_hat)).0),
            theta_hat: opt(mean_se(&col(|r| r.theta_hat)).0),
            trials_ok: runs.len(),
            trials_failed: failed,
            trials_stalled: runs.iter().filter(|r| r.solver_stats.stalled()).count(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TheoryRow {
    pub train: Option<f64>,
    pub gen: Option<f64>,
    pub q_star: Option<f64>,
    pub beta_star: Option<f64>,
    pub theta_star: Option<f64>,
    pub t_star: Option<f64>,
    pub cost: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub lambda: f64,
    pub eta: f64,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub theory: TheoryRow,
    pub feature: EmpiricalSummary,
    pub gaussian: EmpiricalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub config_hash: String,
    pub gen_mode: GenMode,
    pub rows: Vec<ResultRow>,
    pub warnings: Vec<Diagnostic>,
    pub theory_failures: usize,
    pub trial_failures: usize,
}

impl RunResult {
    pub fn has_failures(&self) -> bool {
        self.theory_failures > 0 || self.trial_failures > 0
    }
}

pub fn sizes(n: usize, alpha: f64, eta: f64) -> (usize, usize) {
    let m = ((alpha * n as f64).round() as usize).max(1);
    let k = ((eta * m as f64).round() as usize).max(1);
    (m, k)
}

fn theory_curve(
    cfg: &ExperimentConfig,
    lambda: f64,
    grid: &[f64],
    mo: &ActivationMoments,
    eigs: Option<&[f64]>,
) -> Vec<TheoryRow> {
    let teacher = cfg.teacher_spec();
    let loss = LossSpec { kind: cfg.loss, task: cfg.task };
    let phi_hat = cfg.phi_hat();
    let mut prev: Option<SaddleSolution> = None;
    grid.iter()
        .map(|&eta| {
            let solve = || -> Result<SaddleSolution, String> {
                let law = cfg.law(eta, eigs)?;
                let sc = SaddleConfig { teacher, loss, moments: *mo, law, lambda, eta, tol: Tolerances::default() };
                let p = SaddleProblem::new(sc).map_err(|e| e.to_string())?;
                match p.solve_from(prev.as_ref()) {
                    Ok(s) => Ok(s),
                    Err(_) if prev.is_some() => p.solve().map_err(|e| e.to_string()),
                    Err(e) => Err(e.to_string()),
                }
            };
            match solve() {
                Ok(sol) => {
                    let pr = predict(&sol, &teacher, mo, &phi_hat);
                    let row = TheoryRow {
                        train: Some(sol.cost),
                        gen: pr.as_ref().ok().map(|p| p.gen_error),
                        q_star: Some(sol.q_star),
                        beta_star: Some(sol.beta_star),
                        theta_star: Some(sol.theta_star),
                        t_star: match sol.t_star {
                            TStar::Infinity => None,
                            t => Some(t.value()),
                        },
                        cost: Some(sol.cost),
                        status: match pr {
                            Ok(_) => "ok".into(),
                            Err(e) => format!("prediction failed: {e}"),
                        },
                    };
                    prev = Some(sol);
                    row
                }
                Err(e) => TheoryRow { status: format!("solver failed: {e}"), ..Default::default() },
            }
        })
        .collect()
}

struct Prepared {
    moments: ActivationMoments,
    eigs: Option<Vec<f64>>,
    warnings: Vec<Diagnostic>,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, ConfigError> {
    let diag = cfg.validate();
    if !diag.is_ok() {
        return Err(ConfigError::Invalid(diag.errors));
    }
    let invalid = |field: &str, message: String| ConfigError::Invalid(vec![Diagnostic { field: field.into(), message }]);
    let mo = moments(&cfg.activation(), DEFAULT_ORDER).map_err(|e| invalid("activation", e.to_string()))?;
    let eigs = match &cfg.eigenvalues {
        Some(p) => Some(read_eigenvalues(p).map_err(|e| invalid("eigenvalues", e.to_string()))?),
        None => None,
    };
    Ok(Prepared { moments: mo, eigs, warnings: diag.warnings })
}

/// Theory rows for every (λ, η) grid point in λ-major order, computed on the
/// calling thread. The empirical settings of `cfg` are ignored.
pub fn theory_sweep(cfg: &ExperimentConfig) -> Result<Vec<(f64, f64, TheoryRow)>, ConfigError> {
    let Prepared { moments: mo, eigs, .. } = prepare(cfg)?;
    let grid = cfg.eta_grid();
    let mut out = Vec::new();
    for l in cfg.lambdas() {
        for (eta, row) in grid.iter().zip(theory_curve(cfg, l, &grid, &mo, eigs.as_deref())) {
            out.push((l, *eta, row));
        }
    }
    Ok(out)
}

/// Runs the configured sweep on a pool of `workers` threads (0 picks the
/// rayon default). Results are independent of the worker count.
pub fn run(cfg: &ExperimentConfig, workers: usize) -> Result<RunResult, ConfigError> {
    let Prepared { moments: mo, eigs, warnings } = prepare(cfg)?;
    let grid = cfg.eta_grid();
    let lambdas = cfg.lambdas();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ConfigError::Parse(format!("worker pool: {e}")))?;

    let theory: Vec<Vec<TheoryRow>> = if cfg.engine.theory() {
        pool.install(|| {
            use rayon::prelude::*;
            lambdas.par_iter().map(|&l| theory_curve(cfg, l, &grid, &mo, eigs.as_deref())).collect()
        })
    } else {
        lambdas.iter().map(|_| vec![TheoryRow { status: "skipped".into(), ..Default::default() }; grid.len()]).collect()
    };

    let points: Vec<(usize, usize)> = (0..lambdas.len()).flat_map(|li| (0..grid.len()).map(move |ei| (li, ei))).collect();
    let setups: Vec<TrialSetup> = points
        .iter()
        .map(|&(li, ei)| {
            let (m, k) = sizes(cfg.n, cfg.alpha, grid[ei]);
            TrialSetup {
                ensemble: cfg.ensemble.clone(),
                n: cfg.n,
                m,
                k,
                activation: cfg.activation(),
                moments: mo,
                teacher: cfg.teacher_spec(),
                loss: LossSpec { kind: cfg.loss, task: cfg.task },
                lambda: lambdas[li],
                phi_hat: cfg.phi_hat(),
                gen_mode: cfg.gen_mode,
                formulations: cfg.formulations.clone(),
                seed: cfg.seed,
                grid_index: li * grid.len() + ei,
            }
        })
        .collect();

    let empirical: Vec<Vec<Result<Vec<EmpiricalRun>, EnsembleError>>> = if cfg.engine.empirical() {
        pool.install(|| {
            use rayon::prelude::*;
            let tasks: Vec<(usize, usize)> =
                (0..setups.len()).flat_map(|p| (0..cfg.trials).map(move |t| (p, t))).collect();
            let flat: Vec<Result<Vec<EmpiricalRun>, EnsembleError>> =
                tasks.par_iter().map(|&(p, t)| run_trial(&setups[p], t)).collect();
            let mut it = flat.into_iter();
            (0..setups.len()).map(|_| it.by_ref().take(cfg.trials).collect()).collect()
        })
    } else {
        setups.iter().map(|_| Vec::new()).collect()
    };

    let mut rows = Vec::with_capacity(points.len());
    let (mut theory_failures, mut trial_failures) = (0, 0);
    for (pi, &(li, ei)) in points.iter().enumerate() {
        let th = theory[li][ei].clone();
        if cfg.engine.theory() && th.status != "ok" {
            theory_failures += 1;
        }
        let results = &empirical[pi];
        let failed = results.iter().filter(|r| r.is_err()).count();
        let ok_runs: Vec<&EmpiricalRun> = results.iter().filter_map(|r| r.as_ref().ok()).flatten().collect();
        let summary = |f: Formulation| {
            if !cfg.engine.empirical() || !cfg.formulations.contains(&f) {
                return EmpiricalSummary::default();
            }
            let runs: Vec<&EmpiricalRun> = ok_runs.iter().copied().filter(|r| r.formulation == f).collect();
            EmpiricalSummary::from_runs(&runs, failed)
        };
        let feature = summary(Formulation::Feature);
        let gaussian = summary(Formulation::Gaussian);
        trial_failures += failed + feature.trials_stalled + gaussian.trials_stalled;
        let s = &setups[pi];
        rows.push(ResultRow { lambda: lambdas[li], eta: grid[ei], n: s.n, m: s.m, k: s.k, theory: th, feature, gaussian });
    }
    Ok(RunResult { config_hash: cfg.hash(), gen_mode: cfg.gen_mode, rows, warnings, theory_failures, trial_failures })
}

/// Output columns in order. Errors are dimensionless; `*_se` are standard
/// errors of the trial mean; empty cells mean "not computed".
pub const COLUMNS: [&str; 38] = [
    "lambda",
    "eta",
    "n",
    "m",
    "k",
    "theory_train",
    "theory_gen",
    "q_star",
    "beta_star",
    "theta_star",
    "t_star",
    "theory_cost",
    "theory_status",
    "feature_train_mean",
    "feature_train_se",
    "feature_gen_mean",
    "feature_gen_se",
    "feature_q_hat",
    "feature_beta_hat",
    "feature_theta_hat",
    "feature_trials_ok",
    "feature_trials_failed",
    "feature_trials_stalled",
    "gaussian_train_mean",
    "gaussian_train_se",
    "gaussian_gen_mean",
    "gaussian_gen_se",
    "gaussian_q_hat",
    "gaussian_beta_hat",
    "gaussian_theta_hat",
    "gaussian_trials_ok",
    "gaussian_trials_failed",
    "gaussian_trials_stalled",
    "trials",
    "seed",
    "gen_mode",
    "schema_version",
    "config_hash",
];

/// Shortest round-trip decimal, switching to exponent form outside [1e-4, 1e6).
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e6).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Cell {
    Num(Option<f64>),
    Int(u64),
    Text(String),
}

fn row_cells(r: &ResultRow, res: &RunResult, cfg: &ExperimentConfig) -> Vec<Cell> {
    use Cell::*;
    let e = |s: &EmpiricalSummary| {
        vec![
            Num(s.train_mean),
            Num(s.train_se),
            Num(s.gen_mean),
            Num(s.gen_se),
            Num(s.q_hat),
            Num(s.beta_hat),
            Num(s.theta_hat),
            Int(s.trials_ok as u64),
            Int(s.trials_failed as u64),
            Int(s.trials_stalled as u64),
        ]
    };
    let t = &r.theory;
    let mut cells = vec![
        Num(Some(r.lambda)),
        Num(Some(r.eta)),
        Int(r.n as u64),
        Int(r.m as u64),
        Int(r.k as u64),
        Num(t.train),
        Num(t.gen),
        Num(t.q_star),
        Num(t.beta_star),
        Num(t.theta_star),
        Num(t.t_star),
        Num(t.cost),
        Text(t.status.clone()),
    ];
    cells.extend(e(&r.feature));
    cells.extend(e(&r.gaussian));
    cells.push(Int(cfg.trials as u64));
    cells.push(Int(cfg.seed));
    cells.push(Text(match res.gen_mode {
        GenMode::ClosedFormOverlap => "closed_form_overlap".into(),
        GenMode::FreshSamples { samples } => format!("fresh_samples:{samples}"),
    }));
    cells.push(Int(SCHEMA_VERSION as u64));
    cells.push(Text(res.config_hash.clone()));
    cells
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn to_csv(res: &RunResult, cfg: &ExperimentConfig) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for r in &res.rows {
        let cells: Vec<String> = row_cells(r, res, cfg)
            .into_iter()
            .map(|c| match c {
                Cell::Num(Some(v)) => fmt_f64(v),
                Cell::Num(None) => String::new(),
                Cell::Int(i) => i.to_string(),
                Cell::Text(s) => csv_escape(&s),
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn to_jsonl(res: &RunResult, cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    for r in &res.rows {
        let mut map = serde_json::Map::new();
        for (name, c) in COLUMNS.iter().zip(row_cells(r, res, cfg)) {
            let v = match c {
                Cell::Num(Some(v)) => serde_json::Value::from(v),
                Cell::Num(None) => serde_json::Value::Null,
                Cell::Int(i) => serde_json::Value::from(i),
                Cell::Text(s) => serde_json::Value::from(s),
            };
            map.insert((*name).to_string(), v);
        }
        out.push_str(&serde_json::to_string(&map).unwrap_or_default());
        out.push('\n');
    }
    out
}
