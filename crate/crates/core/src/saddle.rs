//! The deterministic min-max problem
//!
//! ```text
//! min_{ϑ, q, β ≥ |q|/√T1}  sup_{t > -θ}
//!     λq²/(2T1) (t + T2 - T3(t)) - λtβ²/2 + E[M(V; T4(t) Z / λ)]
//! ```
//!
//! The inner supremum is strictly concave in t and is located by a root
//! search on the analytic t-derivative. The outer function is convex and
//! its gradient follows from the envelope theorem; it is minimised by a
//! damped Newton method whose Hessian is a forward difference of
//! gradients. The cone constraint acts as a barrier: the outer function
//! tends to the boundary value with infinite slope, so iterates stay inside.

use serde::{Deserialize, Serialize};

use crate::activations::ActivationMoments;
use crate::losses::{LossError, LossKind, LossSpec, Task};
use crate::spectral::{SpectralError, SpectralLaw, TConstants, TTerms};
use crate::teacher::{LabelMoments, MoreauEval, MoreauQuadrature, TeacherError, TeacherSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub cost: f64,
    pub param: f64,
    /// Relative width at which the inner root search stops.
    pub inner: f64,
    /// β² - q²/T1 below this (relative to 1 + β²) counts as the cone boundary.
    pub boundary: f64,
    pub max_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { cost: 1e-8, param: 1e-6, inner: 1e-13, boundary: 1e-12, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleConfig {
    pub teacher: TeacherSpec,
    pub loss: LossSpec,
    pub moments: ActivationMoments,
    pub law: SpectralLaw,
    pub lambda: f64,
    pub eta: f64,
    pub tol: Tolerances,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SaddleError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error("no bracket for the inner supremum at (ϑ, q, β) = ({theta}, {q}, {beta})")]
    BracketFailure { theta: f64, q: f64, beta: f64 },
    #[error("outer solver stopped after {iterations} iterations (gradient norm {grad_norm:e})")]
    MaxIterations { iterations: usize, grad_norm: f64 },
    #[error("(q, β) = ({q}, {beta}) violates β ≥ |q|/√T1")]
    Infeasible { q: f64, beta: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Location of the inner supremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "at", content = "t", rename_all = "lowercase")]
pub enum TStar {
    Finite(f64),
    /// The supremum is the t → ∞ limit (cone boundary β² = q²/T1).
    Infinity,
    /// The supremum is the limit at t → -θ.
    LeftEdge(f64),
}

impl TStar {
    pub fn value(&self) -> f64 {
        match *self {
            TStar::Finite(t) | TStar::LeftEdge(t) => t,
            TStar::Infinity => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerSup {
    pub t_star: TStar,
    pub value: f64,
    /// Gradient of the supremum in (ϑ, q, β).
    pub grad: [f64; 3],
    pub bracket: (f64, f64),
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub grad_norm: f64,
    pub bracket: (f64, f64),
    pub lambda_stages: Vec<f64>,
    pub inner_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleSolution {
    pub q_star: f64,
    pub beta_star: f64,
    pub theta_star: f64,
    pub t_star: TStar,
    pub cost: f64,
    pub report: SolverReport,
}

/// How E[M(V; x Z)] is evaluated.
#[derive(Debug, Clone)]
enum Envelope {
    Quadrature(MoreauQuadrature),
    /// Squared loss in regression: E[M] = E[V²] / (2(1 + x)).
    Squared { lm: LabelMoments, mu0: f64, mu1: f64 },
}

impl Envelope {
    fn eval(&self, theta: f64, q: f64, beta: f64, x: f64) -> Result<MoreauEval, LossError> {
        match self {
            Envelope::Quadrature(mq) => mq.eval(theta, q, beta, x),
            Envelope::Squared { lm, mu0, mu1 } => {
                if !(x >= 0.0) {
                    return Err(LossError::NonPositiveScale(x));
                }
                let ev2 = beta * beta + mu0 * mu0 * theta * theta + mu1 * mu1 * q * q + lm.second
                    - 2.0 * mu1 * q * lm.cross
                    - 2.0 * mu0 * theta * lm.mean;
                let r = 1.0 / (2.0 * (1.0 + x));
                Ok(MoreauEval {
                    value: ev2 * r,
                    d_theta: (2.0 * mu0 * mu0 * theta - 2.0 * mu0 * lm.mean) * r,
                    d_q: (2.0 * mu1 * mu1 * q - 2.0 * mu1 * lm.cross) * r,
                    d_beta: 2.0 * beta * r,
                    d_x: -ev2 * 2.0 * r * r,
                })
            }
        }
    }

    fn loss_expectation(&self, theta: f64, q: f64, beta: f64) -> f64 {
        match self {
            Envelope::Quadrature(mq) => mq.loss_expectation(theta, q, beta),
            Envelope::Squared { .. } => self.eval(theta, q, beta, 0.0).map(|e| e.value).unwrap_or(f64::NAN),
        }
    }
}

/// A configured instance of the scalar problem with its spectral constants
/// and envelope rule precomputed.
#[derive(Debug, Clone)]
pub struct SaddleProblem {
    pub cfg: SaddleConfig,
    pub tc: TConstants,
    envelope: Envelope,
}

struct Point {
    terms: TTerms,
    env: MoreauEval,
    f: f64,
    df: f64,
}

impl SaddleProblem {
    /// Generic path: envelope expectations by tensor quadrature.
    pub fn new(cfg: SaddleConfig) -> Result<Self, SaddleError> {
        Self::check(&cfg)?;
        let tc = cfg.law.t_constants(&cfg.moments)?;
        let envelope = Envelope::Quadrature(MoreauQuadrature::new(&cfg.teacher, &cfg.loss, &cfg.moments));
        Ok(SaddleProblem { cfg, tc, envelope })
    }

    /// Same problem with a caller-chosen quadrature rule.
    pub fn with_quadrature(cfg: SaddleConfig, mq: MoreauQuadrature) -> Result<Self, SaddleError> {
        Self::check(&cfg)?;
        let tc = cfg.law.t_constants(&cfg.moments)?;
        Ok(SaddleProblem { cfg, tc, envelope: Envelope::Quadrature(mq) })
    }

    /// Squared-loss regression with the envelope expectation in closed form.
    pub fn closed_form(cfg: SaddleConfig) -> Result<Self, SaddleError> {
        Self::check(&cfg)?;
        if cfg.loss.kind != LossKind::Squared || cfg.loss.task != Task::Regression {
            return Err(SaddleError::InvalidConfig("the closed-form path needs squared-loss regression".into()));
        }
        let tc = cfg.law.t_constants(&cfg.moments)?;
        let envelope = Envelope::Squared { lm: cfg.teacher.label_moments(), mu0: cfg.moments.mu0, mu1: cfg.moments.mu1 };
        Ok(SaddleProblem { cfg, tc, envelope })
    }

    fn check(cfg: &SaddleConfig) -> Result<(), SaddleError> {
        if !(cfg.lambda > 0.0 && cfg.lambda.is_finite()) {
            return Err(SaddleError::InvalidConfig(format!("λ = {} must be positive", cfg.lambda)));
        }
        if !(cfg.eta > 0.0 && cfg.eta.is_finite()) {
            return Err(SaddleError::InvalidConfig(format!("η = {} must be positive", cfg.eta)));
        }
        cfg.teacher.validate()?;
        Ok(())
    }

    pub fn theta_bound(&self) -> f64 {
        self.tc.theta
    }

    pub fn uses_theta(&self) -> bool {
        self.cfg.moments.mu0 != 0.0
    }

    fn with_lambda(&self, lambda: f64) -> SaddleProblem {
        let mut p = self.clone();
        p.cfg.lambda = lambda;
        p
    }

    pub fn cone_gap(&self, q: f64, beta: f64) -> f64 {
        beta * beta - q * q / self.tc.t1
    }

    fn on_boundary(&self, q: f64, beta: f64) -> bool {
        self.cone_gap(q, beta) <= self.cfg.tol.boundary * (1.0 + beta * beta)
    }

    fn point(&self, theta: f64, q: f64, beta: f64, t: f64) -> Result<Point, SaddleError> {
        let lam = self.cfg.lambda;
        let terms = self.cfg.law.t_terms(&self.cfg.moments, t, self.cfg.eta)?;
        let env = self.envelope.eval(theta, q, beta, terms.t4 / lam)?;
        let f = 0.5 * lam * q * q * terms.a - 0.5 * lam * t * beta * beta + env.value;
        let df = 0.5 * lam * q * q * terms.da - 0.5 * lam * beta * beta + env.d_x * terms.dt4 / lam;
        Ok(Point { terms, env, f, df })
    }

    /// f_ϑ(q, β, t).
    pub fn objective(&self, theta: f64, q: f64, beta: f64, t: f64) -> Result<f64, SaddleError> {
        Ok(self.point(theta, q, beta, t)?.f)
    }

    /// ∂f/∂t.
    pub fn objective_dt(&self, theta: f64, q: f64, beta: f64, t: f64) -> Result<f64, SaddleError> {
        Ok(self.point(theta, q, beta, t)?.df)
    }

    /// The t → ∞ limit of f on the cone boundary: λq²T2/(2T1) + E[l(V)].
    pub fn boundary_value(&self, theta: f64, q: f64, beta: f64) -> f64 {
        0.5 * self.cfg.lambda * q * q * self.tc.t2 / self.tc.t1 + self.envelope.loss_expectation(theta, q, beta)
    }

    fn grad_at(&self, p: &Point, q: f64, beta: f64, t: f64) -> [f64; 3] {
        let lam = self.cfg.lambda;
        [p.env.d_theta, lam * q * p.terms.a + p.env.d_q, -lam * t * beta + p.env.d_beta]
    }

    pub fn inner_sup_t(&self, theta: f64, q: f64, beta: f64) -> Result<InnerSup, SaddleError> {
        if self.cone_gap(q, beta) < -self.cfg.tol.boundary * (1.0 + beta * beta) || beta < 0.0 {
            return Err(SaddleError::Infeasible { q, beta });
        }
        let th = self.tc.theta;
        if self.on_boundary(q, beta) {
            let value = self.boundary_value(theta, q, beta);
            // gradient at a very large t stands in for the limit
            let t_big = 1e8 * (1.0 + th);
            let p = self.point(theta, q, beta, t_big)?;
            return Ok(InnerSup {
                t_star: TStar::Infinity,
                value,
                grad: self.grad_at(&p, q, beta, t_big),
                bracket: (t_big, f64::INFINITY),
                evaluations: 1,
            });
        }

        let mut evals = 0usize;
        let mut d_at = |s: f64| -> Result<f64, SaddleError> {
            evals += 1;
            Ok(self.point(theta, q, beta, s - th)?.df)
        };
        let s0 = th;
        let d0 = d_at(s0)?;
        let (lo, hi);
        if d0 > 0.0 {
            let mut s = s0;
            let mut prev = s0;
            loop {
                prev = s.max(prev);
                s *= 4.0;
                if s > 1e16 * (1.0 + th) {
                    // slope too shallow to resolve: the limit dominates
                    let value = self.boundary_value(theta, q, beta).max(self.point(theta, q, beta, prev - th)?.f);
                    let p = self.point(theta, q, beta, prev - th)?;
                    return Ok(InnerSup {
                        t_star: TStar::Infinity,
                        value,
                        grad: self.grad_at(&p, q, beta, prev - th),
                        bracket: (prev - th, f64::INFINITY),
                        evaluations: evals,
                    });
                }
                if d_at(s)? <= 0.0 {
                    break;
                }
                prev = s;
            }
            lo = prev;
            hi = s;
        } else {
            let mut s = s0;
            let mut prev = s0;
            loop {
                s *= 0.25;
                if s < 1e-13 * th {
                    let t_edge = s - th;
                    let p = self.point(theta, q, beta, t_edge)?;
                    return Ok(InnerSup {
                        t_star: TStar::LeftEdge(t_edge),
                        value: p.f,
                        grad: self.grad_at(&p, q, beta, t_edge),
                        bracket: (-th, prev - th),
                        evaluations: evals,
                    });
                }
                if d_at(s)? >= 0.0 {
                    break;
                }
                prev = s;
            }
            lo = s;
            hi = prev;
        }
        let tol = self.cfg.tol.inner;
        let s_star = brent(&mut d_at, lo, hi, tol)?;
        let t = s_star - th;
        let p = self.point(theta, q, beta, t)?;
        Ok(InnerSup {
            t_star: TStar::Finite(t),
            value: p.f,
            grad: self.grad_at(&p, q, beta, t),
            bracket: (lo - th, hi - th),
            evaluations: evals + 1,
        })
    }

    /// Minimise the inner supremum over (q, β) with ϑ held fixed.
    pub fn solve_qbeta(&self, theta: f64) -> Result<(f64, f64, f64), SaddleError> {
        let sol = self.minimise(Some(theta), None)?;
        Ok((sol.q_star, sol.beta_star, sol.cost))
    }

    pub fn solve(&self) -> Result<SaddleSolution, SaddleError> {
        self.solve_from(None)
    }

    /// Solve, warm-starting from a previous solution when given. Small λ
    /// are reached through a decreasing ladder of intermediate values.
    pub fn solve_from(&self, start: Option<&SaddleSolution>) -> Result<SaddleSolution, SaddleError> {
        let target = self.cfg.lambda;
        let mut ladder = Vec::new();
        if start.is_none() && target < 1e-2 {
            let mut l = 1e-1;
            while l > target * 1.0001 {
                ladder.push(l);
                l *= 0.1;
            }
        }
        ladder.push(target);
        let mut current: Option<SaddleSolution> = start.cloned();
        let mut stages = Vec::new();
        let mut total_iter = 0;
        let mut total_inner = 0;
        for &lam in &ladder {
            let stage = if lam == target { self.clone() } else { self.with_lambda(lam) };
            let sol = stage.minimise(None, current.as_ref())?;
            total_iter += sol.report.iterations;
            total_inner += sol.report.inner_evaluations;
            stages.push(lam);
            current = Some(sol);
        }
        let mut sol = current.unwrap();
        sol.report.lambda_stages = stages;
        sol.report.iterations = total_iter;
        sol.report.inner_evaluations = total_inner;
        Ok(sol)
    }

    fn start_point(&self, fixed_theta: Option<f64>, warm: Option<&SaddleSolution>) -> [f64; 3] {
        let s = self.tc.t1.sqrt();
        let theta0 = match fixed_theta {
            Some(t) => t,
            None if !self.uses_theta() => 0.0,
            None => warm.map(|w| w.theta_star).unwrap_or_else(|| {
                let lm = self.cfg.teacher.label_moments();
                lm.mean / self.cfg.moments.mu0
            }),
        };
        let (q0, b0) = match warm {
            Some(w) => {
                let (q, b) = project_cone(w.q_star, w.beta_star, s);
                // nudge strictly inside the cone
                (q * 0.999, b.max(1e-6) * 1.001 + 1e-9)
            }
            None => {
                let q0 = 0.1 * self.cfg.teacher.rho.max(0.1);
                (q0, (2.0 * q0.abs() / s).max(0.5))
            }
        };
        [theta0, q0, b0]
    }

    fn minimise(&self, fixed_theta: Option<f64>, warm: Option<&SaddleSolution>) -> Result<SaddleSolution, SaddleError> {
        let free_theta = fixed_theta.is_none() && self.uses_theta();
        let idx: Vec<usize> = if free_theta { vec![0, 1, 2] } else { vec![1, 2] };
        let tol = self.cfg.tol;
        let mut x = self.start_point(fixed_theta, warm);
        let mut inner_count = 0usize;

        let mut eval = |x: &[f64; 3]| -> Result<Option<InnerSup>, SaddleError> {
            if x[2] < 0.0 || self.on_boundary(x[1], x[2]) {
                return Ok(None);
            }
            let r = self.inner_sup_t(x[0], x[1], x[2])?;
            inner_count += r.evaluations;
            Ok(Some(r))
        };

        let mut cur = eval(&x)?.ok_or(SaddleError::Infeasible { q: x[1], beta: x[2] })?;
        let mut iterations = 0;
        let dim = idx.len();
        loop {
            iterations += 1;
            if iterations > tol.max_iter {
                let gn = idx.iter().map(|&i| cur.grad[i].abs()).fold(0.0, f64::max);
                return Err(SaddleError::MaxIterations { iterations, grad_norm: gn });
            }
            // forward-difference Hessian of the envelope-theorem gradient
            let mut hess = vec![vec![0.0; dim]; dim];
            let qb_scale = x[1].abs().max(x[2]).max(1e-12);
            for (a, &i) in idx.iter().enumerate() {
                let mut xp = x;
                let h = match i {
                    0 => 1e-6 * (1.0 + x[0].abs()),
                    1 => {
                        // step towards the cone axis, within the available slack
                        let slack = self.tc.t1.sqrt() * x[2] - x[1].abs();
                        let h = (1e-6 * qb_scale).min(0.5 * slack).max(1e-300);
                        if x[1] > 0.0 {
                            -h
                        } else {
                            h
                        }
                    }
                    _ => 1e-6 * qb_scale,
                };
                xp[i] += h;
                let r = eval(&xp)?.ok_or(SaddleError::Infeasible { q: xp[1], beta: xp[2] })?;
                for (b, &j) in idx.iter().enumerate() {
                    hess[b][a] = (r.grad[j] - cur.grad[j]) / h;
                }
            }
            for a in 0..dim {
                for b in 0..a {
                    let m = 0.5 * (hess[a][b] + hess[b][a]);
                    hess[a][b] = m;
                    hess[b][a] = m;
                }
            }
            let g: Vec<f64> = idx.iter().map(|&i| cur.grad[i]).collect();
            let d = newton_direction(&hess, &g);
            let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();

            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let mut xn = x;
                for (a, &i) in idx.iter().enumerate() {
                    xn[i] += alpha * d[a];
                }
                if let Some(r) = eval(&xn)? {
                    if r.value <= cur.value + 1e-4 * alpha * slope + 1e-15 * (1.0 + cur.value.abs()) {
                        accepted = Some((xn, r));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let step_norm = d.iter().fold(0.0f64, |m, v| m.max(v.abs())) * alpha;
            let scale = 1.0 + idx.iter().fold(0.0f64, |m, &i| m.max(x[i].abs()));
            match accepted {
                Some((xn, r)) => {
                    let dv = (cur.value - r.value).abs();
                    x = xn;
                    cur = r;
                    if alpha == 1.0 && step_norm <= tol.param * 1e-3 * scale && dv <= tol.cost * (1.0 + cur.value.abs()) {
                        break;
                    }
                    if step_norm <= 1e-14 * scale {
                        break;
                    }
                }
                None => {
                    // no decrease possible along the Newton direction: at the
                    // numerical floor of the objective
                    break;
                }
            }
        }
        let gn = idx.iter().map(|&i| cur.grad[i].abs()).fold(0.0, f64::max);
        Ok(SaddleSolution {
            q_star: x[1],
            beta_star: x[2],
            theta_star: x[0],
            t_star: cur.t_star,
            cost: cur.value,
            report: SolverReport {
                iterations,
                grad_norm: gn,
                bracket: cur.bracket,
                lambda_stages: vec![self.cfg.lambda],
                inner_evaluations: inner_count,
            },
        })
    }
}

/// Euclidean projection of (q, β) onto the cone {β ≥ |q| / s}.
pub fn project_cone(q: f64, beta: f64, s: f64) -> (f64, f64) {
    if q.abs() <= s * beta {
        return (q, beta);
    }
    let n = (1.0 + s * s).sqrt();
    let mut best = (0.0, 0.0);
    let mut best_d = q * q + beta * beta;
    for sg in [1.0, -1.0] {
        let (rq, rb) = (sg * s / n, 1.0 / n);
        let c = q * rq + beta * rb;
        if c > 0.0 {
            let (pq, pb) = (c * rq, c * rb);
            let dd = (q - pq).powi(2) + (beta - pb).powi(2);
            if dd < best_d {
                best_d = dd;
                best = (pq, pb);
            }
        }
    }
    best
}

/// Solve H d = -g by Cholesky, adding a diagonal shift until H is
/// positive definite.
fn newton_direction(h: &[Vec<f64>], g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let diag_scale = (0..n).map(|i| h[i][i].abs()).fold(0.0, f64::max).max(1e-300);
    let mut shift = 0.0;
    for _ in 0..60 {
        let mut l = vec![vec![0.0; n]; n];
        let mut ok = true;
        'outer: for i in 0..n {
            for j in 0..=i {
                let mut s = h[i][j] + if i == j { shift } else { 0.0 };
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if s <= 1e-14 * diag_scale {
                        ok = false;
                        break 'outer;
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        if ok {
            let mut y = vec![0.0; n];
            for i in 0..n {
                let mut s = -g[i];
                for k in 0..i {
                    s -= l[i][k] * y[k];
                }
                y[i] = s / l[i][i];
            }
            let mut d = vec![0.0; n];
            for i in (0..n).rev() {
                let mut s = y[i];
                for k in i + 1..n {
                    s -= l[k][i] * d[k];
                }
                d[i] = s / l[i][i];
            }
            return d;
        }
        shift = if shift == 0.0 { 1e-10 * diag_scale } else { shift * 10.0 };
    }
    g.iter().map(|v| -v).collect()
}

/// Brent's method for a root of `f` in [a, b] where f(a) and f(b) differ in sign.
fn brent(mut f: impl FnMut(f64) -> Result<f64, SaddleError>, a: f64, b: f64, rel_tol: f64) -> Result<f64, SaddleError> {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(SaddleError::BracketFailure { theta: f64::NAN, q: a, beta: b });
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * rel_tol * b.abs();
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::{moments, Activation};
    use crate::teacher::Phi;

    fn regression_cfg(law: SpectralLaw, eta: f64) -> SaddleConfig {
        SaddleConfig {
            teacher: TeacherSpec { phi: Phi::Relu, rho: 1.0, delta_noise: 0.1, task: Task::Regression },
            loss: LossSpec::new(LossKind::Squared, Task::Regression).unwrap(),
            moments: moments(&Activation::ReLU, 64).unwrap(),
            law,
            lambda: 1e-1,
            eta,
            tol: Tolerances::default(),
        }
    }

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent(|x| Ok(x * x * x - 2.0), 0.0, 3.0, 1e-14).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn cone_projection() {
        assert_eq!(project_cone(0.5, 1.0, 1.0), (0.5, 1.0));
        let (q, b) = project_cone(2.0, 0.0, 1.0);
        assert!((q - 1.0).abs() < 1e-15 && (b - 1.0).abs() < 1e-15);
        assert_eq!(project_cone(1.0, -5.0, 1.0), (0.0, 0.0));
        let (q, b) = project_cone(-3.0, 1.0, 2.0);
        assert!((q.abs() - 2.0 * b).abs() < 1e-12 && q < 0.0);
    }

    #[test]
    fn inner_sup_is_stationary() {
        let delta = 2.0 * 1.5;
        let p = SaddleProblem::new(regression_cfg(SpectralLaw::marchenko_pastur(delta).unwrap(), 1.5)).unwrap();
        let r = p.inner_sup_t(0.8, 0.3, 0.6).unwrap();
        let t = r.t_star.value();
        assert!(t.is_finite());
        let h = 1e-5 * (1.0 + t.abs());
        let fd = (p.objective(0.8, 0.3, 0.6, t + h).unwrap() - p.objective(0.8, 0.3, 0.6, t - h).unwrap()) / (2.0 * h);
        assert!(fd.abs() < 1e-8, "fd = {fd}");
        assert!(p.objective_dt(0.8, 0.3, 0.6, t).unwrap().abs() < 1e-10);
    }

    #[test]
    fn analytic_dt_matches_finite_difference() {
        let p = SaddleProblem::new(regression_cfg(SpectralLaw::marchenko_pastur(0.6).unwrap(), 0.3)).unwrap();
        for t in [-0.5 * p.tc.theta, 0.0, 0.7, 5.0] {
            let h = 1e-6 * (1.0 + t.abs());
            let fd = (p.objective(0.2, 0.4, 0.9, t + h).unwrap() - p.objective(0.2, 0.4, 0.9, t - h).unwrap()) / (2.0 * h);
            let an = p.objective_dt(0.2, 0.4, 0.9, t).unwrap();
            assert!((fd - an).abs() < 1e-7 * (1.0 + an.abs()), "t={t} fd={fd} an={an}");
        }
    }

    #[test]
    fn boundary_uses_limit() {
        let p = SaddleProblem::new(regression_cfg(SpectralLaw::orthogonal(2.0).unwrap(), 1.0)).unwrap();
        let q = 0.5;
        let beta = q / p.tc.t1.sqrt();
        let r = p.inner_sup_t(0.3, q, beta).unwrap();
        assert_eq!(r.t_star, TStar::Infinity);
        let far = p.objective(0.3, q, beta, 1e9).unwrap();
        assert!((r.value - far).abs() < 1e-6);
    }

    #[test]
    fn closed_form_objective_matches_quadrature_path() {
        let cfg = regression_cfg(SpectralLaw::marchenko_pastur(1.4).unwrap(), 0.7);
        let a = SaddleProblem::new(cfg.clone()).unwrap();
        let b = SaddleProblem::closed_form(cfg).unwrap();
        for &(th, q, be, t) in &[(0.1, 0.2, 0.5, 0.3), (1.0, -0.4, 0.8, 2.0), (0.5, 0.9, 2.0, -0.1)] {
            let (u, v) = (a.objective(th, q, be, t).unwrap(), b.objective(th, q, be, t).unwrap());
            assert!((u - v).abs() < 1e-8, "{u} vs {v}");
        }
    }

    #[test]
    fn squared_solution_has_closed_form_theta() {
        let cfg = regression_cfg(SpectralLaw::marchenko_pastur(2.0 * 0.8).unwrap(), 0.8);
        let p = SaddleProblem::new(cfg.clone()).unwrap();
        let sol = p.solve().unwrap();
        let g = cfg.teacher.gamma_constants().unwrap();
        assert!((sol.theta_star - g.gamma3 / cfg.moments.mu0).abs() < 1e-6, "{}", sol.theta_star);
        assert!(sol.beta_star * sol.beta_star >= sol.q_star * sol.q_star / p.tc.t1);
    }

    #[test]
    fn odd_activation_keeps_theta_zero() {
        let mut cfg = regression_cfg(SpectralLaw::marchenko_pastur(1.0).unwrap(), 0.5);
        cfg.moments = moments(&Activation::Sign, 64).unwrap();
        let sol = SaddleProblem::new(cfg).unwrap().solve().unwrap();
        assert_eq!(sol.theta_star, 0.0);
    }

    #[test]
    fn huge_lambda_shrinks_to_origin() {
        let mut cfg = regression_cfg(SpectralLaw::marchenko_pastur(1.0).unwrap(), 0.5);
        cfg.lambda = 1e6;
        let sol = SaddleProblem::new(cfg).unwrap().solve().unwrap();
        assert!(sol.q_star.abs() < 1e-4 && sol.beta_star < 1e-4, "{sol:?}");
    }
}
