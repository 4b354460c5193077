//! Training and generalization errors from the optimal overlaps.
//!
//! `ν1 = ρS` and `ν2 = μ0ϑ + μ1qS + βH` are jointly Gaussian with mean
//! `(0, μ0ϑ)` and covariance `[[ρ², μ1ρq], [μ1ρq, μ1²q² + β²]]`. The
//! generalization error is `E[(φ(ν1) - φ̂(ν2))²] / 4^υ`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::activations::ActivationMoments;
use crate::losses::Task;
use crate::quadrature::{adaptive, gauss_hermite, normal_cdf, normal_pdf};
use crate::saddle::SaddleSolution;
use crate::teacher::{sign, Phi, TeacherSpec};

const S_RANGE: f64 = 10.0;

#[derive(Clone)]
pub enum PhiHat {
    Identity,
    Sign,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for PhiHat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhiHat::Identity => write!(f, "Identity"),
            PhiHat::Sign => write!(f, "Sign"),
            PhiHat::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhiHatName {
    Identity,
    Sign,
}

impl From<PhiHatName> for PhiHat {
    fn from(n: PhiHatName) -> Self {
        match n {
            PhiHatName::Identity => PhiHat::Identity,
            PhiHatName::Sign => PhiHat::Sign,
        }
    }
}

impl PhiHat {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            PhiHat::Identity => x,
            PhiHat::Sign => sign(x),
            PhiHat::Custom(f) => f(x),
        }
    }
}

/// The three order parameters, from theory or measured on a fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlaps {
    pub theta: f64,
    pub q: f64,
    pub beta: f64,
}

impl From<&SaddleSolution> for Overlaps {
    fn from(s: &SaddleSolution) -> Self {
        Overlaps { theta: s.theta_star, q: s.q_star, beta: s.beta_star }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapGaussian {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl OverlapGaussian {
    pub fn new(rho: f64, m: &ActivationMoments, o: &Overlaps) -> Self {
        let c12 = m.mu1 * rho * o.q;
        OverlapGaussian {
            mean: [0.0, m.mu0 * o.theta],
            cov: [[rho * rho, c12], [c12, m.mu1 * m.mu1 * o.q * o.q + o.beta * o.beta]],
        }
    }

    pub fn det(&self) -> f64 {
        self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionPair {
    pub train_error: f64,
    pub gen_error: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredictError {
    #[error("no closed form for this teacher and prediction map")]
    NoClosedForm,
    #[error("generalization error quadrature did not converge")]
    Quadrature,
}

pub fn training_error(sol: &SaddleSolution) -> f64 {
    sol.cost
}

fn scale(t: &TeacherSpec) -> f64 {
    match t.task {
        Task::Regression => 1.0,
        Task::Classification => 0.25,
    }
}

/// E_H[(y - φ̂(c + βH))²] for a fixed teacher output y.
fn inner_h(phi_hat: &PhiHat, y: f64, c: f64, beta: f64, h_order: usize) -> f64 {
    match phi_hat {
        PhiHat::Identity => (y - c).powi(2) + beta * beta,
        PhiHat::Sign => {
            let p_pos = if beta > 0.0 {
                normal_cdf(c / beta)
            } else if c >= 0.0 {
                1.0
            } else {
                0.0
            };
            p_pos * (y - 1.0).powi(2) + (1.0 - p_pos) * (y + 1.0).powi(2)
        }
        PhiHat::Custom(f) => {
            if beta == 0.0 {
                return (y - f(c)).powi(2);
            }
            gauss_hermite(h_order).integrate(|h| (y - f(c + beta * h)).powi(2))
        }
    }
}

fn gen_with_order(
    o: &Overlaps,
    teacher: &TeacherSpec,
    m: &ActivationMoments,
    phi_hat: &PhiHat,
    h_order: usize,
) -> Result<f64, PredictError> {
    let (c0, b) = (m.mu0 * o.theta, m.mu1 * o.q);
    let beta = o.beta.max(0.0);
    let rho = teacher.rho;
    let integrand = |s: f64| -> [f64; 1] {
        let c = c0 + b * s;
        let v = match teacher.phi {
            Phi::SignFlip { p } => {
                let y = sign(rho * s);
                (1.0 - p) * inner_h(phi_hat, y, c, beta, h_order) + p * inner_h(phi_hat, -y, c, beta, h_order)
            }
            phi => inner_h(phi_hat, phi.eval(rho * s), c, beta, h_order),
        };
        [v * normal_pdf(s)]
    };
    let mut breaks = vec![-S_RANGE, 0.0, S_RANGE];
    if b != 0.0 {
        let s0 = -c0 / b;
        if s0.abs() < S_RANGE && s0 != 0.0 {
            breaks.push(s0);
        }
    }
    breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut total = 0.0;
    for w in breaks.windows(2) {
        total += adaptive(&integrand, w[0], w[1], 1e-13, 2000).map_err(|_| PredictError::Quadrature)?[0];
    }
    Ok(total * scale(teacher))
}

/// Generalization error by one-dimensional adaptive quadrature over S with
/// the H-expectation done analytically for identity and sign predictions.
/// A zero β reduces to the one-dimensional integral automatically.
pub fn gen_error_generic(
    o: &Overlaps,
    teacher: &TeacherSpec,
    m: &ActivationMoments,
    phi_hat: &PhiHat,
) -> Result<f64, PredictError> {
    match phi_hat {
        PhiHat::Custom(_) => {
            let mut order = 64;
            let mut prev = gen_with_order(o, teacher, m, phi_hat, order)?;
            for _ in 0..4 {
                order *= 2;
                let next = gen_with_order(o, teacher, m, phi_hat, order)?;
                if (next - prev).abs() < 1e-8 * (1.0 + next.abs()) {
                    return Ok(next.max(0.0));
                }
                prev = next;
            }
            Err(PredictError::Quadrature)
        }
        _ => gen_with_order(o, teacher, m, phi_hat, 0).map(|v| v.max(0.0)),
    }
}

pub fn gen_error_closed(
    o: &Overlaps,
    teacher: &TeacherSpec,
    m: &ActivationMoments,
    phi_hat: &PhiHat,
) -> Result<f64, PredictError> {
    let (rho, mu0, mu1) = (teacher.rho, m.mu0, m.mu1);
    let (th, q, b) = (o.theta, o.q, o.beta);
    let common = mu1 * mu1 * q * q + b * b + mu0 * mu0 * th * th;
    match (teacher.task, teacher.phi, phi_hat) {
        (Task::Regression, Phi::Relu, PhiHat::Identity) => {
            let (chi0, chi1, chi2) = (1.0 / (2.0 * std::f64::consts::PI).sqrt(), 0.5, 0.5);
            Ok(rho * rho * chi2 - 2.0 * mu1 * chi1 * rho * q - 2.0 * rho * mu0 * chi0 * th + common)
        }
        (Task::Regression, Phi::Identity, PhiHat::Identity) => Ok(rho * rho - 2.0 * mu1 * rho * q + common),
        (Task::Classification, Phi::SignFlip { p }, PhiHat::Sign) if th == 0.0 || mu0 == 0.0 => {
            let norm = (mu1 * mu1 * q * q + b * b).sqrt();
            let angle = if norm > 0.0 { (mu1 * q / norm).clamp(-1.0, 1.0).acos() } else { 0.5 * std::f64::consts::PI };
            Ok(p + (1.0 - 2.0 * p) / std::f64::consts::PI * angle)
        }
        _ => Err(PredictError::NoClosedForm),
    }
}

pub fn predict(
    sol: &SaddleSolution,
    teacher: &TeacherSpec,
    m: &ActivationMoments,
    phi_hat: &PhiHat,
) -> Result<PredictionPair, PredictError> {
    Ok(PredictionPair {
        train_error: training_error(sol),
        gen_error: gen_error_generic(&Overlaps::from(sol), teacher, m, phi_hat)?,
    })
}
