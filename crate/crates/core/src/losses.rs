//! Convex scalar losses, their proximal operators and Moreau envelopes.
//!
//! The envelope is `M(a; x) = min_z l(z) + (z - a)² / (2x)`. Two identities
//! are used throughout the crate:
//!
//! * `∂M/∂a = (a - prox(a, x)) / x`
//! * `∂M/∂x = -((a - prox(a, x)) / x)² / 2`

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Squared,
    Hinge,
    Lad,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("envelope scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("logistic prox did not converge for a = {a}, x = {x}")]
    NewtonDivergence { a: f64, x: f64 },
    #[error("{kind:?} loss is not paired with the {task:?} task")]
    Mismatch { kind: LossKind, task: Task },
}

const LOGISTIC_TOL: f64 = 1e-12;
const LOGISTIC_MAX_ITER: usize = 100;

/// Envelope value together with both partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub value: f64,
    pub prox: f64,
    pub d_a: f64,
    pub d_x: f64,
}

impl LossKind {
    pub fn kinks(self) -> &'static [f64] {
        match self {
            LossKind::Hinge | LossKind::Lad => &[1.0],
            _ => &[],
        }
    }

    /// The scalar loss l(v).
    #[inline]
    pub fn eval(self, v: f64) -> f64 {
        match self {
            LossKind::Squared => 0.5 * v * v,
            LossKind::Hinge => (1.0 - v).max(0.0),
            LossKind::Lad => (1.0 - v).abs(),
            LossKind::Logistic => softplus(-v),
        }
    }

    /// A subgradient of l at v (the right derivative at kinks).
    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            LossKind::Squared => v,
            LossKind::Hinge => {
                if v < 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::Lad => {
                if v < 1.0 {
                    -1.0
                } else {
                    1.0
                }
            }
            LossKind::Logistic => -sigmoid(-v),
        }
    }

    pub fn prox(self, a: f64, x: f64) -> Result<f64, LossError> {
        if !(x > 0.0) {
            return Err(LossError::NonPositiveScale(x));
        }
        Ok(match self {
            LossKind::Squared => a / (1.0 + x),
            LossKind::Hinge => {
                if a >= 1.0 {
                    a
                } else if a <= 1.0 - x {
                    a + x
                } else {
                    1.0
                }
            }
            LossKind::Lad => {
                if a > 1.0 + x {
                    a - x
                } else if a < 1.0 - x {
                    a + x
                } else {
                    1.0
                }
            }
            LossKind::Logistic => logistic_prox(a, x)?,
        })
    }

    pub fn moreau(self, a: f64, x: f64) -> Result<f64, LossError> {
        let z = self.prox(a, x)?;
        Ok(self.eval(z) + (z - a) * (z - a) / (2.0 * x))
    }

    /// Envelope and its partials in one prox evaluation. `x = 0` returns the
    /// loss itself with its (sub)gradient.
    #[inline]
    pub fn envelope(self, a: f64, x: f64) -> Result<Envelope, LossError> {
        if x == 0.0 {
            let g = self.derivative(a);
            return Ok(Envelope { value: self.eval(a), prox: a, d_a: g, d_x: -0.5 * g * g });
        }
        let z = self.prox(a, x)?;
        let g = (a - z) / x;
        Ok(Envelope {
            value: self.eval(z) + 0.5 * g * g * x,
            prox: z,
            d_a: g,
            d_x: -0.5 * g * g,
        })
    }
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Root of `z - a - x σ(-z) = 0`, which lies in `[a, a + x]`.
/// Newton steps are kept inside a shrinking bracket; a step that leaves the
/// bracket or fails to halve the previous step is replaced by bisection.
fn logistic_prox(a: f64, x: f64) -> Result<f64, LossError> {
    let g = |z: f64| z - a - x * sigmoid(-z);
    let (mut lo, mut hi) = (a, a + x);
    let mut z = (a + x * sigmoid(-a)).clamp(lo, hi);
    let mut last_step = hi - lo;
    for _ in 0..LOGISTIC_MAX_ITER {
        let gz = g(z);
        if gz == 0.0 {
            return Ok(z);
        }
        if gz > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let sz = sigmoid(-z);
        let dg = 1.0 + x * sz * (1.0 - sz);
        let newton = z - gz / dg;
        let next = if newton > lo && newton < hi && (newton - z).abs() < 0.5 * last_step {
            newton
        } else {
            0.5 * (lo + hi)
        };
        last_step = (next - z).abs();
        let tol = LOGISTIC_TOL * (1.0 + next.abs());
        if last_step <= tol || hi - lo <= tol {
            return Ok(next);
        }
        z = next;
    }
    Err(LossError::NewtonDivergence { a, x })
}

impl LossSpec {
    pub fn new(kind: LossKind, task: Task) -> Result<Self, LossError> {
        let ok = matches!(
            (kind, task),
            (LossKind::Squared, Task::Regression)
                | (LossKind::Hinge | LossKind::Lad | LossKind::Logistic, Task::Classification)
        );
        if ok {
            Ok(LossSpec { kind, task })
        } else {
            Err(LossError::Mismatch { kind, task })
        }
    }

    pub fn prox(&self, a: f64, x: f64) -> Result<f64, LossError> {
        self.kind.prox(a, x)
    }

    pub fn moreau(&self, a: f64, x: f64) -> Result<f64, LossError> {
        self.kind.moreau(a, x)
    }

    /// l(y, z): the scalar loss at `z - y` for regression, at `y z` for classification.
    #[inline]
    pub fn loss_eval(&self, y: f64, z: f64) -> f64 {
        self.kind.eval(self.margin(y, z))
    }

    #[inline]
    pub fn margin(&self, y: f64, z: f64) -> f64 {
        match self.task {
            Task::Regression => z - y,
            Task::Classification => y * z,
        }
    }
}
