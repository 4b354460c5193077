//! Scalar activations and their Gaussian moments (μ0, μ1, μ⋆²).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::quadrature::normal_expect_split;

pub const DEFAULT_ORDER: usize = 64;

/// Clamp band for a slightly negative μ⋆².
const CLAMP_TOL: f64 = 1e-12;
const MU1_TOL: f64 = 1e-12;

#[derive(Clone)]
pub enum Activation {
    ReLU,
    SoftPlus,
    Tanh,
    Erf,
    Sign,
    BinaryStep,
    Identity,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            Some(n) => write!(f, "{n:?}"),
            None => write!(f, "Custom"),
        }
    }
}

/// Serializable names of the built-in activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationName {
    Relu,
    Softplus,
    Tanh,
    Erf,
    Sign,
    Step,
    Identity,
}

impl From<ActivationName> for Activation {
    fn from(n: ActivationName) -> Self {
        match n {
            ActivationName::Relu => Activation::ReLU,
            ActivationName::Softplus => Activation::SoftPlus,
            ActivationName::Tanh => Activation::Tanh,
            ActivationName::Erf => Activation::Erf,
            ActivationName::Sign => Activation::Sign,
            ActivationName::Step => Activation::BinaryStep,
            ActivationName::Identity => Activation::Identity,
        }
    }
}

impl Activation {
    pub fn name(&self) -> Option<ActivationName> {
        Some(match self {
            Activation::ReLU => ActivationName::Relu,
            Activation::SoftPlus => ActivationName::Softplus,
            Activation::Tanh => ActivationName::Tanh,
            Activation::Erf => ActivationName::Erf,
            Activation::Sign => ActivationName::Sign,
            Activation::BinaryStep => ActivationName::Step,
            Activation::Identity => ActivationName::Identity,
            Activation::Custom(_) => return None,
        })
    }

    pub fn builtins() -> [Activation; 7] {
        [
            Activation::ReLU,
            Activation::SoftPlus,
            Activation::Tanh,
            Activation::Erf,
            Activation::Sign,
            Activation::BinaryStep,
            Activation::Identity,
        ]
    }

    pub fn is_odd(&self) -> bool {
        matches!(self, Activation::Sign | Activation::Tanh | Activation::Erf | Activation::Identity)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Activation::ReLU => x.max(0.0),
            Activation::SoftPlus => {
                // log(1 + e^x) without overflow
                if x > 0.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Erf => libm::erf(x),
            Activation::Sign => {
                if x >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Activation::BinaryStep => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
            Activation::Custom(f) => f(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationMoments {
    pub mu0: f64,
    pub mu1: f64,
    pub mu_star_sq: f64,
}

impl ActivationMoments {
    pub fn mu_star(&self) -> f64 {
        self.mu_star_sq.sqrt()
    }

    /// E[σ(z)²].
    pub fn second_moment(&self) -> f64 {
        self.mu0 * self.mu0 + self.mu1 * self.mu1 + self.mu_star_sq
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ActivationError {
    #[error("E[zσ(z)] = {0} is not positive")]
    NonPositiveMu1(f64),
    #[error("E[σ(z)²] did not converge: {coarse} at order {order}, {fine} at order {}", 2 * order)]
    DivergentMoment { order: usize, coarse: f64, fine: f64 },
    #[error("negative residual variance μ⋆² = {0}")]
    NegativeVariance(f64),
    #[error("quadrature order {0} below the minimum of 16")]
    OrderTooLow(usize),
}

fn raw_moments(act: &Activation, order: usize) -> [f64; 3] {
    let m0 = normal_expect_split(order, |z| act.eval(z));
    let m1 = normal_expect_split(order, |z| z * act.eval(z));
    let m2 = normal_expect_split(order, |z| {
        let s = act.eval(z);
        s * s
    });
    [m0, m1, m2]
}

/// Gaussian moments of `act` by Gauss–Hermite quadrature folded at the
/// origin; the value at order `order` is compared with order `2 * order`.
pub fn moments(act: &Activation, order: usize) -> Result<ActivationMoments, ActivationError> {
    if order < 16 {
        return Err(ActivationError::OrderTooLow(order));
    }
    let [m0, m1, m2] = raw_moments(act, order);
    let [f0, f1, f2] = raw_moments(act, 2 * order);
    let scale = 1.0 + f2.abs();
    let drift = (m0 - f0).abs().max((m1 - f1).abs()).max((m2 - f2).abs());
    if !(f2.is_finite() && m2.is_finite()) || drift > 1e-8 * scale {
        return Err(ActivationError::DivergentMoment { order, coarse: m2, fine: f2 });
    }
    if m1 <= MU1_TOL {
        return Err(ActivationError::NonPositiveMu1(m1));
    }
    let mut mu_star_sq = m2 - m0 * m0 - m1 * m1;
    if mu_star_sq < -CLAMP_TOL * scale {
        return Err(ActivationError::NegativeVariance(mu_star_sq));
    }
    // quadrature noise around a linear activation
    if mu_star_sq.abs() <= CLAMP_TOL * scale {
        mu_star_sq = 0.0;
    }
    Ok(ActivationMoments { mu0: m0, mu1: m1, mu_star_sq })
}
