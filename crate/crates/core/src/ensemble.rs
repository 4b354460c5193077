//! Finite-size simulation of the feature formulation and its Gaussian
//! surrogate: feature matrices, data, ERM solvers and measured overlaps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use faer::linalg::solvers::Solve;
use faer::{Col, Mat, MatRef, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::activations::{Activation, ActivationMoments};
use crate::losses::{LossKind, LossSpec, Task};
use crate::predict::{gen_error_generic, Overlaps, PhiHat};
use crate::teacher::{Phi, TeacherSpec};

pub const ADMM_TOL: f64 = 1e-8;
pub const ADMM_STALL: f64 = 1e-6;
pub const ADMM_MAX_ITER: usize = 10_000;
const BALANCE_EVERY: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnsembleKind {
    /// iid N(0, 1/n) entries.
    GaussianIid,
    /// U D V with Haar U, V and all singular values max(√δ, 1).
    RandomOrthogonal,
    FromFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureEnsemble {
    pub kind: EnsembleKind,
    pub n: usize,
    pub k: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("feature matrix file line {line}: {msg}")]
    File { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("feature matrix is {got:?}, expected {want:?}")]
    Shape { got: (usize, usize), want: (usize, usize) },
    #[error("linear algebra failure: {0}")]
    Linalg(String),
    #[error("ADMM stalled with primal residual {primal:e} and dual residual {dual:e}")]
    AdmmStall { primal: f64, dual: f64 },
}

/// Independent random streams used by one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Features,
    Teacher,
    Data,
    Noise,
    ZChannel,
    Test,
    Probe,
}

/// A reproducible stream for one (seed, grid point, trial, purpose).
pub fn stream(seed: u64, grid_index: usize, trial: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"rfdd-stream");
    h.update(seed.to_le_bytes());
    h.update((grid_index as u64).to_le_bytes());
    h.update((trial as u64).to_le_bytes());
    h.update((purpose as u8).to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Row-major matrix of iid standard normals.
fn gaussian_mat<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Mat<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect();
    Mat::from_fn(rows, cols, |i, j| data[i * cols + j])
}

/// Thin QR with the diagonal of R made positive: uniform on the Stiefel manifold.
fn haar_columns<R: Rng + ?Sized>(n: usize, r: usize, rng: &mut R) -> Mat<f64> {
    let g = gaussian_mat(n, r, 1.0, rng);
    let qr = g.qr();
    let mut q = qr.compute_thin_Q();
    let rr = qr.thin_R();
    for j in 0..r {
        if rr[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

pub fn sample_features<R: Rng + ?Sized>(e: &FeatureEnsemble, rng: &mut R) -> Result<Mat<f64>, EnsembleError> {
    let (n, k) = (e.n, e.k);
    match &e.kind {
        EnsembleKind::GaussianIid => Ok(gaussian_mat(n, k, 1.0 / (n as f64).sqrt(), rng)),
        EnsembleKind::RandomOrthogonal => {
            let r = n.min(k);
            let d = (k as f64 / n as f64).sqrt().max(1.0);
            let u = haar_columns(n, r, rng);
            let v = haar_columns(k, r, rng);
            let mut f = &u * v.transpose();
            for j in 0..k {
                for i in 0..n {
                    f[(i, j)] *= d;
                }
            }
            Ok(f)
        }
        EnsembleKind::FromFile { path } => {
            let f = read_feature_matrix(path)?;
            if (f.nrows(), f.ncols()) != (n, k) {
                return Err(EnsembleError::Shape { got: (f.nrows(), f.ncols()), want: (n, k) });
            }
            Ok(f)
        }
    }
}

/// Dense text format: a `n,k` header line, then `n` rows of `k` comma-separated values.
pub fn format_feature_matrix(f: MatRef<'_, f64>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{},{}", f.nrows(), f.ncols());
    for i in 0..f.nrows() {
        for j in 0..f.ncols() {
            if j > 0 {
                s.push(',');
            }
            let _ = write!(s, "{:?}", f[(i, j)]);
        }
        s.push('\n');
    }
    s
}

pub fn write_feature_matrix(path: &Path, f: MatRef<'_, f64>) -> Result<(), EnsembleError> {
    std::fs::write(path, format_feature_matrix(f))?;
    Ok(())
}

pub fn parse_feature_matrix(text: &str) -> Result<Mat<f64>, EnsembleError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hl, header) = lines.next().ok_or(EnsembleError::File { line: 1, msg: "missing n,k header".into() })?;
    let err = |line: usize, msg: String| EnsembleError::File { line: line + 1, msg };
    let dims: Vec<&str> = header.split(',').map(str::trim).collect();
    if dims.len() != 2 {
        return Err(err(hl, format!("header {header:?} is not n,k")));
    }
    let parse_dim = |s: &str| s.parse::<usize>().ok().filter(|&v| v > 0);
    let (n, k) = match (parse_dim(dims[0]), parse_dim(dims[1])) {
        (Some(n), Some(k)) => (n, k),
        _ => return Err(err(hl, format!("header {header:?} is not two positive integers"))),
    };
    let mut data = Vec::with_capacity(n * k);
    let mut rows = 0;
    for (ln, line) in lines {
        if rows == n {
            return Err(err(ln, format!("more than {n} rows")));
        }
        let before = data.len();
        for tok in line.split(',') {
            let v: f64 = tok.trim().parse().map_err(|_| err(ln, format!("bad number {:?}", tok.trim())))?;
            if !v.is_finite() {
                return Err(err(ln, format!("non-finite entry {v}")));
            }
            data.push(v);
        }
        if data.len() - before != k {
            return Err(err(ln, format!("expected {k} entries, found {}", data.len() - before)));
        }
        rows += 1;
    }
    if rows != n {
        return Err(EnsembleError::File { line: text.lines().count(), msg: format!("expected {n} rows, found {rows}") });
    }
    Ok(Mat::from_fn(n, k, |i, j| data[i * k + j]))
}

pub fn read_feature_matrix(path: &Path) -> Result<Mat<f64>, EnsembleError> {
    parse_feature_matrix(&std::fs::read_to_string(path)?)
}

/// ξ uniform on the sphere of radius ρ.
pub fn sample_teacher<R: Rng + ?Sized>(n: usize, rho: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return g.into_iter().map(|x| rho * x / norm).collect();
        }
    }
}

/// m × n matrix whose rows are the data vectors aᵢ ~ N(0, I).
pub fn sample_data<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> Mat<f64> {
    gaussian_mat(m, n, 1.0, rng)
}

/// Rows σ(Fᵀaᵢ).
pub fn build_design(f: MatRef<'_, f64>, a: MatRef<'_, f64>, act: &Activation) -> Mat<f64> {
    let mut x = a * f;
    for j in 0..x.ncols() {
        for v in x.col_as_slice_mut(j) {
            *v = act.eval(*v);
        }
    }
    x
}

/// Rows μ0·1 + μ1 Fᵀaᵢ + μ⋆ zᵢ with fresh standard normal zᵢ.
pub fn build_gaussian_design<R: Rng + ?Sized>(
    f: MatRef<'_, f64>,
    a: MatRef<'_, f64>,
    m: &ActivationMoments,
    rng: &mut R,
) -> Mat<f64> {
    let mut x = a * f;
    let (rows, cols) = (x.nrows(), x.ncols());
    let z = gaussian_mat(rows, cols, m.mu_star(), rng);
    for j in 0..cols {
        for i in 0..rows {
            x[(i, j)] = m.mu0 + m.mu1 * x[(i, j)] + z[(i, j)];
        }
    }
    x
}

fn matvec(x: MatRef<'_, f64>, v: &[f64]) -> Vec<f64> {
    let c: Col<f64> = x * faer::col::ColRef::from_slice(v);
    c.iter().copied().collect()
}

fn tmatvec(x: MatRef<'_, f64>, v: &[f64]) -> Vec<f64> {
    matvec(x.transpose(), v)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    Ridge,
    Admm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub method: SolverMethod,
    pub iterations: usize,
    /// RMS of `v - (Bw - c)`.
    pub primal_residual: f64,
    /// `ρ‖Bᵀ(v - v_prev)‖ / m`, the dual residual of the normalised objective.
    pub dual_residual: f64,
    pub rho: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErmSolution {
    pub w: Vec<f64>,
    pub stats: SolverStats,
}

impl SolverStats {
    /// ADMM that ran out of iterations with a residual above the stall level.
    pub fn stalled(&self) -> bool {
        self.method == SolverMethod::Admm
            && !self.converged
            && (self.primal_residual > ADMM_STALL || self.dual_residual > ADMM_STALL)
    }
}

impl ErmSolution {
    pub fn stall(&self) -> Option<EnsembleError> {
        let s = &self.stats;
        s.stalled().then_some(EnsembleError::AdmmStall { primal: s.primal_residual, dual: s.dual_residual })
    }
}

/// (1/m) Σ l(yᵢ, xᵢᵀw) + λ/2 ‖w‖².
pub fn erm_objective(design: MatRef<'_, f64>, y: &[f64], loss: &LossSpec, lambda: f64, w: &[f64]) -> f64 {
    let z = matvec(design, w);
    let m = y.len() as f64;
    z.iter().zip(y).map(|(&zi, &yi)| loss.loss_eval(yi, zi)).sum::<f64>() / m
        + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>()
}

pub fn solve_erm(design: MatRef<'_, f64>, y: &[f64], loss: &LossSpec, lambda: f64) -> Result<ErmSolution, EnsembleError> {
    if loss.kind == LossKind::Squared {
        solve_ridge(design, y, lambda)
    } else {
        solve_admm(design, y, loss, lambda)
    }
}

/// Squared loss (1/(2m))‖Xw - y‖² + λ/2‖w‖² through the smaller normal system.
pub fn solve_ridge(x: MatRef<'_, f64>, y: &[f64], lambda: f64) -> Result<ErmSolution, EnsembleError> {
    let (m, k) = (x.nrows(), x.ncols());
    let ml = m as f64 * lambda;
    let yc = faer::col::ColRef::from_slice(y);
    let w: Col<f64> = if k <= m {
        let mut g = x.transpose() * x;
        for i in 0..k {
            g[(i, i)] += ml;
        }
        let llt = g.llt(Side::Lower).map_err(|e| EnsembleError::Linalg(format!("{e:?}")))?;
        llt.solve(x.transpose() * yc)
    } else {
        let mut g = x * x.transpose();
        for i in 0..m {
            g[(i, i)] += ml;
        }
        let llt = g.llt(Side::Lower).map_err(|e| EnsembleError::Linalg(format!("{e:?}")))?;
        x.transpose() * llt.solve(yc)
    };
    Ok(ErmSolution {
        w: w.iter().copied().collect(),
        stats: SolverStats {
            method: SolverMethod::Ridge,
            iterations: 1,
            primal_residual: 0.0,
            dual_residual: 0.0,
            rho: 0.0,
            converged: true,
        },
    })
}

/// ADMM on `v = Bw - c`, with `B = X, c = y` for regression and
/// `B = diag(y) X, c = 0` for classification. The w-step reuses one
/// eigendecomposition of the smaller Gram matrix for every penalty value.
pub fn solve_admm(x: MatRef<'_, f64>, y: &[f64], loss: &LossSpec, lambda: f64) -> Result<ErmSolution, EnsembleError> {
    let (m, k) = (x.nrows(), x.ncols());
    let (b, c): (Mat<f64>, Vec<f64>) = match loss.task {
        Task::Regression => (x.to_owned(), y.to_vec()),
        Task::Classification => (Mat::from_fn(m, k, |i, j| y[i] * x[(i, j)]), vec![0.0; m]),
    };
    let ml = m as f64 * lambda;
    let primal_form = k <= m;
    let gram = if primal_form { b.transpose() * &b } else { &b * b.transpose() };
    let eig = gram.self_adjoint_eigen(Side::Lower).map_err(|e| EnsembleError::Linalg(format!("{e:?}")))?;
    let sigma: Vec<f64> = eig.S().column_vector().iter().map(|s| s.max(0.0)).collect();
    // basis in which the map b -> Bw is diagonal
    let basis: Mat<f64> = if primal_form { &b * eig.U() } else { eig.U().to_owned() };

    let project = |rhs: &[f64], rho: f64| -> (Vec<f64>, Vec<f64>) {
        let mut t = tmatvec(basis.as_ref(), rhs);
        for (ti, &s) in t.iter_mut().zip(&sigma) {
            *ti *= if primal_form { rho / (ml + rho * s) } else { rho * s / (ml + rho * s) };
        }
        let bw = matvec(basis.as_ref(), &t);
        (bw, t)
    };
    // ‖Bᵀd‖ from the same basis
    let bt_norm = |d: &[f64]| -> f64 {
        let t = tmatvec(basis.as_ref(), d);
        if primal_form {
            norm(&t)
        } else {
            t.iter().zip(&sigma).map(|(ti, s)| ti * ti * s).sum::<f64>().sqrt()
        }
    };

    let mut rho = 1.0;
    let mut v: Vec<f64> = c.iter().map(|ci| -ci).collect();
    let mut u = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    let mut bw: Vec<f64>;
    let mut t: Vec<f64> = Vec::new();
    let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;
    let mut converged = false;
    let mf = m as f64;
    while iterations < ADMM_MAX_ITER {
        iterations += 1;
        for i in 0..m {
            rhs[i] = v[i] + c[i] - u[i];
        }
        (bw, t) = project(&rhs, rho);
        let v_prev = v.clone();
        let scale = 1.0 / rho;
        for i in 0..m {
            let a = bw[i] - c[i] + u[i];
            v[i] = loss.kind.prox(a, scale).map_err(|e| EnsembleError::Linalg(e.to_string()))?;
        }
        let mut r = vec![0.0; m];
        for i in 0..m {
            r[i] = bw[i] - c[i] - v[i];
            u[i] += r[i];
        }
        let rn = norm(&r);
        primal = rn / mf.sqrt();
        // the dual residual costs a full product; evaluate it periodically
        if primal >= ADMM_TOL && iterations % BALANCE_EVERY != 0 && iterations < ADMM_MAX_ITER {
            continue;
        }
        let dv: Vec<f64> = v.iter().zip(&v_prev).map(|(a, b)| a - b).collect();
        let sn = rho * bt_norm(&dv);
        dual = sn / mf;
        if primal < ADMM_TOL && dual < ADMM_TOL {
            converged = true;
            break;
        }
        if rn > 10.0 * sn {
            rho *= 2.0;
            u.iter_mut().for_each(|ui| *ui /= 2.0);
        } else if sn > 10.0 * rn {
            rho /= 2.0;
            u.iter_mut().for_each(|ui| *ui *= 2.0);
        }
    }
    // recover w from the last w-step coefficients
    let w: Vec<f64> = if primal_form {
        // t holds diag(ρ/(mλ+ρσ)) Cᵀ rhs, and w = W t
        matvec(eig.U(), &t)
    } else {
        // t holds diag(ρσ/(mλ+ρσ)) Uᵀ rhs; w = Bᵀ U diag(ρ/(mλ+ρσ)) Uᵀ rhs
        let coef: Vec<f64> = t
            .iter()
            .zip(&sigma)
            .map(|(ti, &s)| if s > 0.0 { ti / s } else { 0.0 })
            .collect();
        let z = matvec(eig.U(), &coef);
        tmatvec(b.as_ref(), &z)
    };
    Ok(ErmSolution {
        w,
        stats: SolverStats { method: SolverMethod::Admm, iterations, primal_residual: primal, dual_residual: dual, rho, converged },
    })
}

/// Overlaps of a trained student: q̂ = ξ̄ᵀFŵ, β̂ = √(ŵᵀMŵ) with
/// M = μ1² FᵀP⊥F + μ⋆² I, and ϑ̂ = 1ᵀŵ.
pub fn measure(f: MatRef<'_, f64>, xi: &[f64], w: &[f64], m: &ActivationMoments) -> Overlaps {
    let fw = matvec(f, w);
    let xn = norm(xi);
    let q = fw.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() / xn;
    let fw2 = fw.iter().map(|v| v * v).sum::<f64>();
    let w2 = w.iter().map(|v| v * v).sum::<f64>();
    let beta2 = m.mu1 * m.mu1 * (fw2 - q * q).max(0.0) + m.mu_star_sq * w2;
    Overlaps { theta: w.iter().sum(), q, beta: beta2.max(0.0).sqrt() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GenMode {
    ClosedFormOverlap,
    FreshSamples { samples: usize },
}

/// Which student channel is simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    Feature,
    Gaussian,
}

/// Squared prediction error of one test point averaged over the label
/// randomness: flips for SignFlip, none otherwise.
fn point_error(teacher: &TeacherSpec, phi_hat: &PhiHat, u: f64, pred: f64) -> f64 {
    let yh = phi_hat.eval(pred);
    match teacher.phi {
        Phi::SignFlip { p } => {
            let s = teacher.phi.eval(u);
            (1.0 - p) * (s - yh).powi(2) + p * (-s - yh).powi(2)
        }
        phi => (phi.eval(u) - yh).powi(2),
    }
}

/// Monte Carlo generalization error from `samples` fresh test points, with
/// its standard error.
#[allow(clippy::too_many_arguments)]
pub fn fresh_gen_error<R: Rng + ?Sized>(
    formulation: Formulation,
    f: MatRef<'_, f64>,
    xi: &[f64],
    w: &[f64],
    act: &Activation,
    m: &ActivationMoments,
    teacher: &TeacherSpec,
    phi_hat: &PhiHat,
    samples: usize,
    rng: &mut R,
) -> (f64, f64) {
    const BATCH: usize = 1000;
    let n = f.nrows();
    let scale = match teacher.task {
        Task::Regression => 1.0,
        Task::Classification => 0.25,
    };
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut done = 0;
    while done < samples {
        let rows = BATCH.min(samples - done);
        let a = sample_data(rows, n, rng);
        let x = match formulation {
            Formulation::Feature => build_design(f, a.as_ref(), act),
            Formulation::Gaussian => build_gaussian_design(f, a.as_ref(), m, rng),
        };
        let pred = matvec(x.as_ref(), w);
        let u = matvec(a.as_ref(), xi);
        for i in 0..rows {
            let e = scale * point_error(teacher, phi_hat, u[i], pred[i]);
            s1 += e;
            s2 += e * e;
        }
        done += rows;
    }
    let nf = samples as f64;
    let mean = s1 / nf;
    let var = (s2 / nf - mean * mean).max(0.0);
    (mean, (var / nf).sqrt())
}

/// Generalization error of a trained student through the overlap formula.
pub fn overlap_gen_error(o: &Overlaps, teacher: &TeacherSpec, m: &ActivationMoments, phi_hat: &PhiHat) -> f64 {
    gen_error_generic(o, teacher, m, phi_hat).unwrap_or(f64::NAN)
}

/// Result of one simulated ERM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRun {
    pub formulation: Formulation,
    #[serde(skip)]
    pub w_hat: Vec<f64>,
    pub train_error: f64,
    pub gen_error: f64,
    pub q_hat: f64,
    pub beta_hat: f64,
    pub theta_hat: f64,
    pub seed: u64,
    pub trial: usize,
    pub solver_stats: SolverStats,
}

/// Everything needed to simulate trials at one (η, λ) grid point.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub ensemble: EnsembleKind,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub activation: Activation,
    pub moments: ActivationMoments,
    pub teacher: TeacherSpec,
    pub loss: LossSpec,
    pub lambda: f64,
    pub phi_hat: PhiHat,
    pub gen_mode: GenMode,
    pub formulations: Vec<Formulation>,
    pub seed: u64,
    pub grid_index: usize,
}

/// Runs one trial. All formulations share the feature matrix, teacher, data
/// and label noise of the trial; only the student channel differs.
pub fn run_trial(s: &TrialSetup, trial: usize) -> Result<Vec<EmpiricalRun>, EnsembleError> {
    let fe = FeatureEnsemble { kind: s.ensemble.clone(), n: s.n, k: s.k };
    let f = sample_features(&fe, &mut stream(s.seed, s.grid_index, trial, Purpose::Features))?;
    let xi = sample_teacher(s.n, s.teacher.rho, &mut stream(s.seed, s.grid_index, trial, Purpose::Teacher));
    let a = sample_data(s.m, s.n, &mut stream(s.seed, s.grid_index, trial, Purpose::Data));
    let u = matvec(a.as_ref(), &xi);
    let y = s.teacher.sample_labels(&u, &mut stream(s.seed, s.grid_index, trial, Purpose::Noise));
    let mut out = Vec::with_capacity(s.formulations.len());
    for &form in &s.formulations {
        let x = match form {
            Formulation::Feature => build_design(f.as_ref(), a.as_ref(), &s.activation),
            Formulation::Gaussian => build_gaussian_design(
                f.as_ref(),
                a.as_ref(),
                &s.moments,
                &mut stream(s.seed, s.grid_index, trial, Purpose::ZChannel),
            ),
        };
        let sol = solve_erm(x.as_ref(), &y, &s.loss, s.lambda)?;
        let train_error = erm_objective(x.as_ref(), &y, &s.loss, s.lambda, &sol.w);
        let o = measure(f.as_ref(), &xi, &sol.w, &s.moments);
        let gen_error = match s.gen_mode {
            GenMode::ClosedFormOverlap => overlap_gen_error(&o, &s.teacher, &s.moments, &s.phi_hat),
            GenMode::FreshSamples { samples } => {
                fresh_gen_error(
                    form,
                    f.as_ref(),
                    &xi,
                    &sol.w,
                    &s.activation,
                    &s.moments,
                    &s.teacher,
                    &s.phi_hat,
                    samples,
                    &mut stream(s.seed, s.grid_index, trial, Purpose::Test),
                )
                .0
            }
        };
        out.push(EmpiricalRun {
            formulation: form,
            w_hat: sol.w,
            train_error,
            gen_error,
            q_hat: o.q,
            beta_hat: o.beta,
            theta_hat: o.theta,
            seed: s.seed,
            trial,
            solver_stats: sol.stats,
        });
    }
    Ok(out)
}

/// Runs `trials` independent trials on the current rayon pool. Results come
/// back in trial order whatever the scheduling.
pub fn run_trials(s: &TrialSetup, trials: usize) -> Vec<Result<Vec<EmpiricalRun>, EnsembleError>> {
    (0..trials).into_par_iter().map(|t| run_trial(s, t)).collect()
}

/// Sample mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Empirical first and second moments of (ν1, ν2) = (ξᵀa, wᵀσ(Fᵀa))
/// against the Gaussian-equivalent prediction, as z-scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GetReport {
    pub samples: usize,
    /// Order: E ν1, E ν2, Var ν1, Cov(ν1, ν2), Var ν2.
    pub empirical: [f64; 5],
    pub predicted: [f64; 5],
    pub std_errors: [f64; 5],
    pub z: [f64; 5],
}

impl GetReport {
    pub fn max_abs_z(&self) -> f64 {
        self.z.iter().fold(0.0, |a, z| a.max(z.abs()))
    }
}

pub fn get_check<R: Rng + ?Sized>(
    f: MatRef<'_, f64>,
    xi: &[f64],
    w: &[f64],
    act: &Activation,
    m: &ActivationMoments,
    samples: usize,
    rng: &mut R,
) -> GetReport {
    const BATCH: usize = 2000;
    let n = f.nrows();
    let mut nu1 = Vec::with_capacity(samples);
    let mut nu2 = Vec::with_capacity(samples);
    while nu1.len() < samples {
        let rows = BATCH.min(samples - nu1.len());
        let a = sample_data(rows, n, rng);
        nu1.extend(matvec(a.as_ref(), xi));
        nu2.extend(matvec(build_design(f, a.as_ref(), act).as_ref(), w));
    }
    let nf = samples as f64;
    let m1 = nu1.iter().sum::<f64>() / nf;
    let m2 = nu2.iter().sum::<f64>() / nf;
    let d1: Vec<f64> = nu1.iter().map(|v| v - m1).collect();
    let d2: Vec<f64> = nu2.iter().map(|v| v - m2).collect();
    let stat = |g: &dyn Fn(usize) -> f64| -> (f64, f64) {
        let (mut s, mut s2) = (0.0, 0.0);
        for i in 0..samples {
            let v = g(i);
            s += v;
            s2 += v * v;
        }
        let mean = s / nf;
        (mean, ((s2 / nf - mean * mean).max(0.0) / nf).sqrt())
    };
    let e1 = stat(&|i| nu1[i]);
    let e2 = stat(&|i| nu2[i]);
    let v1 = stat(&|i| d1[i] * d1[i]);
    let c12 = stat(&|i| d1[i] * d2[i]);
    let v2 = stat(&|i| d2[i] * d2[i]);

    let fw = matvec(f, w);
    let xfw: f64 = fw.iter().zip(xi).map(|(a, b)| a * b).sum();
    let fw2: f64 = fw.iter().map(|v| v * v).sum();
    let w2: f64 = w.iter().map(|v| v * v).sum();
    let rho2: f64 = xi.iter().map(|v| v * v).sum();
    let predicted = [0.0, m.mu0 * w.iter().sum::<f64>(), rho2, m.mu1 * xfw, m.mu1 * m.mu1 * fw2 + m.mu_star_sq * w2];
    let pairs = [e1, e2, v1, c12, v2];
    let empirical = pairs.map(|p| p.0);
    let std_errors = pairs.map(|p| p.1);
    let mut z = [0.0; 5];
    for i in 0..5 {
        z[i] = (empirical[i] - predicted[i]) / std_errors[i];
    }
    GetReport { samples, empirical, predicted, std_errors, z }
}
