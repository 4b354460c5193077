//! Limiting eigenvalue laws of the feature Gram matrix and the spectral
//! functionals T1, T2, T3(t), T4(t) and θ built on them.
//!
//! `T` is `FᵀF` when δ = k/n < 1 and `FFᵀ` otherwise. For Gaussian features
//! with entries of variance 1/n both cases give the Marchenko–Pastur law
//! with edges (1 ∓ √δ)² and mean max(δ, 1).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activations::ActivationMoments;
use crate::quadrature::adaptive;

pub const EXPECT_TOL: f64 = 1e-9;
const MAX_INTERVALS: usize = 4000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LawKind {
    PointMass(f64),
    MarchenkoPastur,
    Empirical(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralLaw {
    pub kind: LawKind,
    pub delta: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub e: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpectralError {
    #[error("quadrature failed to reach {tol:e} (error estimate {error:e})")]
    QuadratureFailure { tol: f64, error: f64 },
    #[error("degenerate law: T1 denominator {0:e}")]
    DegenerateLaw(f64),
    #[error("t = {t} is outside (-θ, ∞) with θ = {theta}")]
    OutOfDomain { t: f64, theta: f64 },
    #[error("invalid law: {0}")]
    InvalidLaw(String),
    #[error("eigenvalue file line {line}: {msg}")]
    File { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TConstants {
    pub t1: f64,
    pub t2: f64,
    pub theta: f64,
}

fn e_d(delta: f64) -> (f64, f64) {
    if delta >= 1.0 {
        (1.0, delta)
    } else {
        (delta, 1.0)
    }
}

impl SpectralLaw {
    pub fn point_mass(kappa0: f64, delta: f64) -> Result<Self, SpectralError> {
        if !(kappa0 > 0.0 && kappa0.is_finite()) || !(delta > 0.0) {
            return Err(SpectralError::InvalidLaw(format!("point mass at {kappa0} with δ = {delta}")));
        }
        let (e, d) = e_d(delta);
        Ok(SpectralLaw { kind: LawKind::PointMass(kappa0), delta, kappa_min: kappa0, kappa_max: kappa0, e, d })
    }

    /// The law of the random orthogonal ensemble: all mass at max(δ, 1).
    pub fn orthogonal(delta: f64) -> Result<Self, SpectralError> {
        Self::point_mass(delta.max(1.0), delta)
    }

    /// Marchenko–Pastur law of Gaussian features. At δ = 1 the lower edge is
    /// 0; the functionals stay finite whenever μ⋆² > 0.
    pub fn marchenko_pastur(delta: f64) -> Result<Self, SpectralError> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(SpectralError::InvalidLaw(format!("δ = {delta}")));
        }
        let (lo, hi) = mp_edges(delta);
        let (e, d) = e_d(delta);
        Ok(SpectralLaw { kind: LawKind::MarchenkoPastur, delta, kappa_min: lo, kappa_max: hi, e, d })
    }

    pub fn empirical(mut eigs: Vec<f64>, delta: f64) -> Result<Self, SpectralError> {
        if eigs.is_empty() || !(delta > 0.0) {
            return Err(SpectralError::InvalidLaw("empty eigenvalue list".into()));
        }
        if eigs.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SpectralError::InvalidLaw("eigenvalues must be positive and finite".into()));
        }
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (e, d) = e_d(delta);
        Ok(SpectralLaw {
            kappa_min: eigs[0],
            kappa_max: *eigs.last().unwrap(),
            kind: LawKind::Empirical(eigs),
            delta,
            e,
            d,
        })
    }

    pub fn satisfies_support_assumption(&self) -> bool {
        self.kappa_min > 0.0 && self.kappa_min <= self.kappa_max && self.kappa_max.is_finite()
    }

    /// E_κ[g(κ)] for several functionals at once.
    pub fn expect_many<const N: usize>(&self, g: &dyn Fn(f64) -> [f64; N]) -> Result<[f64; N], SpectralError> {
        match &self.kind {
            LawKind::PointMass(k) => Ok(g(*k)),
            LawKind::Empirical(eigs) => {
                let mut acc = [0.0; N];
                for &k in eigs {
                    let v = g(k);
                    for i in 0..N {
                        acc[i] += v[i];
                    }
                }
                let n = eigs.len() as f64;
                Ok(acc.map(|v| v / n))
            }
            LawKind::MarchenkoPastur => {
                // κ = a + (b - a)(1 - cos φ)/2 removes both square-root edges
                let (a, b) = (self.kappa_min, self.kappa_max);
                let half = 0.5 * (b - a);
                let norm = 1.0 / (2.0 * std::f64::consts::PI * self.e);
                let integrand = |phi: f64| -> [f64; N] {
                    let kappa = a + half * (1.0 - phi.cos());
                    let s = phi.sin();
                    let jac = if kappa > 0.0 { norm * half * half * s * s / kappa } else { norm * 4.0 * half * half / b };
                    g(kappa).map(|v| v * jac)
                };
                adaptive(&integrand, 0.0, std::f64::consts::PI, EXPECT_TOL * 1e-3, MAX_INTERVALS)
                    .map_err(|f| SpectralError::QuadratureFailure { tol: EXPECT_TOL, error: f.error })
            }
        }
    }

    pub fn expect(&self, g: impl Fn(f64) -> f64) -> Result<f64, SpectralError> {
        self.expect_many::<1>(&|k| [g(k)]).map(|v| v[0])
    }

    pub fn theta(&self, m: &ActivationMoments) -> f64 {
        1.0 / (m.mu1 * m.mu1 * self.kappa_max + m.mu_star_sq)
    }

    pub fn t_constants(&self, m: &ActivationMoments) -> Result<TConstants, SpectralError> {
        let (m1s, mss) = (m.mu1 * m.mu1, m.mu_star_sq);
        let [ek_c, e_inv_c, ek_c2] = self.expect_many::<3>(&|k| {
            let c = mss + m1s * k;
            [k / c, 1.0 / c, k / (c * c)]
        })?;
        let den = 1.0 - self.e + self.e * mss * e_inv_c;
        if !(den > 1e-14) || !ek_c.is_finite() {
            return Err(SpectralError::DegenerateLaw(den));
        }
        Ok(TConstants { t1: self.e * ek_c / den, t2: ek_c2 / (den * ek_c), theta: self.theta(m) })
    }

    /// The alternative form of T1 valid when e = 1.
    pub fn t1_ratio_form(&self, m: &ActivationMoments) -> Result<f64, SpectralError> {
        let (m1s, mss) = (m.mu1 * m.mu1, m.mu_star_sq);
        let [num, den] = self.expect_many::<2>(&|k| {
            let c = mss + m1s * k;
            [k / c, mss / c]
        })?;
        Ok(num / den)
    }

    fn check_t(&self, m: &ActivationMoments, t: f64) -> Result<(), SpectralError> {
        let theta = self.theta(m);
        if !(t > -theta + 1e-12) {
            return Err(SpectralError::OutOfDomain { t, theta });
        }
        Ok(())
    }

    /// t + T2 - T3(t), evaluated in the cancellation-free form
    /// `-t μ1² T1 + T1 / (e E[κ/(1 + t c(κ))])`.
    pub fn shifted_t3(&self, m: &ActivationMoments, tc: &TConstants, t: f64) -> Result<f64, SpectralError> {
        self.check_t(m, t)?;
        let (m1s, mss) = (m.mu1 * m.mu1, m.mu_star_sq);
        let e1 = self.expect(|k| k / (1.0 + t * (mss + m1s * k)))?;
        Ok(-t * m1s * tc.t1 + tc.t1 / (self.e * e1))
    }

    pub fn t3(&self, m: &ActivationMoments, tc: &TConstants, t: f64) -> Result<f64, SpectralError> {
        Ok(t + tc.t2 - self.shifted_t3(m, tc, t)?)
    }

    pub fn t4(&self, m: &ActivationMoments, t: f64, eta: f64) -> Result<f64, SpectralError> {
        self.check_t(m, t)?;
        let (m1s, mss) = (m.mu1 * m.mu1, m.mu_star_sq);
        let e = self.expect(|k| {
            let c = mss + m1s * k;
            c / (1.0 + t * c)
        })?;
        Ok(eta / self.d * e + eta * (1.0 - 1.0 / self.d) * mss / (1.0 + t * mss))
    }

    /// Everything the saddle objective needs at a given t, in one pass:
    /// `A(t) = (t + T2 - T3(t)) / T1`, `T4(t)` and their t-derivatives.
    pub fn t_terms(&self, m: &ActivationMoments, t: f64, eta: f64) -> Result<TTerms, SpectralError> {
        self.check_t(m, t)?;
        let (m1s, mss) = (m.mu1 * m.mu1, m.mu_star_sq);
        let [e1, de1, e4, de4] = self.expect_many::<4>(&|k| {
            let c = mss + m1s * k;
            let r = 1.0 / (1.0 + t * c);
            [k * r, -k * c * r * r, c * r, -c * c * r * r]
        })?;
        let a = -t * m1s + 1.0 / (self.e * e1);
        let da = -m1s - de1 / (self.e * e1 * e1);
        let r0 = 1.0 / (1.0 + t * mss);
        let tail = eta * (1.0 - 1.0 / self.d) * mss;
        let t4 = eta / self.d * e4 + tail * r0;
        let dt4 = eta / self.d * de4 - tail * mss * r0 * r0;
        Ok(TTerms { a, da, t4, dt4 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTerms {
    pub a: f64,
    pub da: f64,
    pub t4: f64,
    pub dt4: f64,
}

pub fn mp_edges(delta: f64) -> (f64, f64) {
    let r = delta.sqrt();
    ((1.0 - r).powi(2), (1.0 + r).powi(2))
}

/// Density of the Marchenko–Pastur law of T for Gaussian features with
/// entry variance 1/n. Both regimes share the edges (1 ∓ √δ)².
pub fn mp_density(delta: f64, kappa: f64) -> f64 {
    let (a, b) = mp_edges(delta);
    if !(kappa > a && kappa < b) {
        return 0.0;
    }
    ((b - kappa) * (kappa - a)).sqrt() / (2.0 * std::f64::consts::PI * delta.min(1.0) * kappa)
}

/// Cumulative distribution of the law of `mp_density`.
pub fn mp_cdf(delta: f64, kappa: f64) -> f64 {
    let (a, b) = mp_edges(delta);
    if kappa <= a {
        return 0.0;
    }
    if kappa >= b {
        return 1.0;
    }
    let half = 0.5 * (b - a);
    let phi_max = (1.0 - (kappa - a) / half).clamp(-1.0, 1.0).acos();
    let norm = 1.0 / (2.0 * std::f64::consts::PI * delta.min(1.0));
    let f = |phi: f64| {
        let k = a + half * (1.0 - phi.cos());
        let s = phi.sin();
        [if k > 0.0 { norm * half * half * s * s / k } else { norm * 4.0 * half * half / b }]
    };
    adaptive(&f, 0.0, phi_max, 1e-13, MAX_INTERVALS).map(|v| v[0]).unwrap_or(f64::NAN).clamp(0.0, 1.0)
}

pub fn read_eigenvalues(path: &Path) -> Result<Vec<f64>, SpectralError> {
    let text = std::fs::read_to_string(path).map_err(|e| SpectralError::Io(e.to_string()))?;
    parse_eigenvalues(&text)
}

/// One decimal per line, ascending, strictly positive. Blank lines and
/// lines starting with `#` are skipped.
pub fn parse_eigenvalues(text: &str) -> Result<Vec<f64>, SpectralError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| SpectralError::File { line: i + 1, msg: format!("not a number: {line:?}") })?;
        if !(v.is_finite() && v > 0.0) {
            return Err(SpectralError::File { line: i + 1, msg: format!("eigenvalue {v} is not positive") });
        }
        if let Some(&prev) = out.last() {
            if v < prev {
                return Err(SpectralError::File { line: i + 1, msg: "eigenvalues are not ascending".into() });
            }
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(SpectralError::File { line: 0, msg: "no eigenvalues".into() });
    }
    Ok(out)
}

pub fn write_eigenvalues(path: &Path, eigs: &[f64]) -> std::io::Result<()> {
    use std::fmt::Write as _;
    let mut s = String::new();
    for v in eigs {
        writeln!(s, "{v:?}").unwrap();
    }
    std::fs::write(path, s)
}
