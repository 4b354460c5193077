//! Gaussian quadrature rules built from three-term recurrences.
//!
//! Every rule here is computed the same way: the Jacobi matrix of the
//! orthogonal polynomial family is diagonalised by Sturm bisection, the
//! nodes are polished with Newton steps on the orthonormal recurrence and
//! the weights come from the Christoffel function. Rules are cached per
//! order since the solvers request the same handful of orders repeatedly.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Nodes and weights of a quadrature rule. Weights include the measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Number of eigenvalues of the Jacobi matrix strictly below `x`.
fn sturm_count(alpha: &[f64], off_sq: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for i in 0..alpha.len() {
        let prev = if i == 0 { 0.0 } else { off_sq[i - 1] / d };
        d = alpha[i] - x - prev;
        if d == 0.0 {
            d = f64::EPSILON * (x.abs() + 1.0);
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// Gauss rule for a measure of total mass `mu0` with monic recurrence
/// `p_{k+1} = (x - alpha_k) p_k - beta_k p_{k-1}`. `beta[0]` is ignored.
pub fn gauss_from_recurrence(alpha: &[f64], beta: &[f64], mu0: f64) -> Rule {
    let n = alpha.len();
    assert!(n >= 1 && beta.len() >= n);
    let off_sq: Vec<f64> = (1..n).map(|k| beta[k]).collect();
    let off: Vec<f64> = off_sq.iter().map(|b| b.sqrt()).collect();

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { off[i - 1] } else { 0.0 } + if i + 1 < n { off[i] } else { 0.0 };
        lo = lo.min(alpha[i] - r);
        hi = hi.max(alpha[i] + r);
    }

    let mut nodes = Vec::with_capacity(n);
    for k in 0..n {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if sturm_count(alpha, &off_sq, mid) > k {
                b = mid;
            } else {
                a = mid;
            }
        }
        nodes.push(0.5 * (a + b));
    }

    // orthonormal polynomials p_0..p_{n-1} and the unnormalised p_n, all
    // divided by BIG^rescales to stay finite far in the tails
    const BIG: f64 = 1e150;
    let eval = |x: f64| -> (Vec<f64>, f64, f64, i32) {
        let mut p = vec![0.0; n];
        let mut dp = vec![0.0; n];
        let mut rescales = 0;
        p[0] = 1.0;
        if n > 1 {
            p[1] = (x - alpha[0]) / off[0];
            dp[1] = 1.0 / off[0];
        }
        for k in 1..n.saturating_sub(1) {
            p[k + 1] = ((x - alpha[k]) * p[k] - off[k - 1] * p[k - 1]) / off[k];
            dp[k + 1] = ((x - alpha[k]) * dp[k] + p[k] - off[k - 1] * dp[k - 1]) / off[k];
            if p[k + 1].abs() > BIG || dp[k + 1].abs() > BIG {
                for v in p[..=k + 1].iter_mut().chain(dp[..=k + 1].iter_mut()) {
                    *v /= BIG;
                }
                rescales += 1;
            }
        }
        let last = n - 1;
        let (pm, dpm) = if n > 1 { (p[last - 1], dp[last - 1]) } else { (0.0, 0.0) };
        let offm = if n > 1 { off[last - 1] } else { 0.0 };
        let pn = (x - alpha[last]) * p[last] - offm * pm;
        let dpn = (x - alpha[last]) * dp[last] + p[last] - offm * dpm;
        (p, pn, dpn, rescales)
    };

    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (_, pn, dpn, _) = eval(*x);
            if dpn == 0.0 {
                break;
            }
            let step = pn / dpn;
            *x -= step;
            if step.abs() <= 4.0 * f64::EPSILON * x.abs().max(1e-300) {
                break;
            }
        }
        let (p, _, _, rescales) = eval(*x);
        let s: f64 = p.iter().map(|v| v * v).sum();
        weights.push(if rescales == 0 { mu0 / s } else { 0.0 });
    }
    Rule { nodes, weights }
}

/// Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> Arc<Rule> {
    cached(Family::Legendre, n, || {
        let alpha = vec![0.0; n];
        let beta: Vec<f64> = (0..n)
            .map(|k| {
                let k = k as f64;
                k * k / (4.0 * k * k - 1.0)
            })
            .collect();
        gauss_from_recurrence(&alpha, &beta, 2.0)
    })
}

/// Gauss–Hermite rule for the standard normal density (weights sum to 1).
pub fn gauss_hermite(n: usize) -> Arc<Rule> {
    cached(Family::Hermite, n, || {
        let alpha = vec![0.0; n];
        let beta: Vec<f64> = (0..n).map(|k| k as f64).collect();
        gauss_from_recurrence(&alpha, &beta, 1.0)
    })
}

/// Gauss rule for the standard normal density restricted to [0, ∞)
/// (weights sum to 1/2). Recurrence coefficients come from a discretised
/// Stieltjes procedure on a fine composite Gauss–Legendre grid.
pub fn half_normal(n: usize) -> Arc<Rule> {
    cached(Family::HalfNormal, n, || {
        let upper = (8.0 * n as f64).sqrt() + 12.0;
        let panels = (upper / 0.05).ceil() as usize;
        let width = upper / panels as f64;
        let gl = gauss_legendre(24);
        let mut xs = Vec::with_capacity(panels * gl.len());
        let mut ws = Vec::with_capacity(panels * gl.len());
        for p in 0..panels {
            let a = p as f64 * width;
            for (&t, &w) in gl.nodes.iter().zip(&gl.weights) {
                let x = a + 0.5 * width * (t + 1.0);
                xs.push(x);
                ws.push(0.5 * width * w * normal_pdf(x));
            }
        }
        let (alpha, beta, mu0) = stieltjes(&xs, &ws, n);
        gauss_from_recurrence(&alpha, &beta, mu0)
    })
}

/// Recurrence coefficients of a discrete measure. The vectors carry
/// √wᵢ pᵢ(xᵢ), which have unit norm, so nothing overflows in the tails.
fn stieltjes(xs: &[f64], ws: &[f64], n: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let mu0: f64 = ws.iter().sum();
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    beta[0] = mu0;
    let mut prev = vec![0.0; xs.len()];
    let mut cur: Vec<f64> = ws.iter().map(|w| (w / mu0).sqrt()).collect();
    for k in 0..n {
        let a: f64 = xs.iter().zip(&cur).map(|(x, q)| x * q * q).sum();
        alpha[k] = a;
        if k + 1 == n {
            break;
        }
        let b_prev = if k == 0 { 0.0 } else { beta[k].sqrt() };
        let mut next: Vec<f64> = (0..xs.len()).map(|i| (xs[i] - a) * cur[i] - b_prev * prev[i]).collect();
        let norm_sq: f64 = next.iter().map(|q| q * q).sum();
        beta[k + 1] = norm_sq;
        let norm = norm_sq.sqrt();
        next.iter_mut().for_each(|q| *q /= norm);
        prev = cur;
        cur = next;
    }
    (alpha, beta, mu0)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// E[g(z)] for z ~ N(0, 1), folding the line at the origin so integrands
/// with a kink or jump at zero are handled exactly by each half.
pub fn normal_expect_split(order: usize, g: impl Fn(f64) -> f64) -> f64 {
    let rule = half_normal(order);
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&s, &w)| w * (g(s) + g(-s)))
        .sum()
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
#[error("adaptive quadrature did not reach tolerance {tol:e} (estimate {estimate}, error {error:e})")]
pub struct AdaptiveFailure {
    pub tol: f64,
    pub estimate: f64,
    pub error: f64,
}

/// Globally adaptive Gauss–Legendre integration of `f` over [a, b].
/// Intervals are bisected until the 10-point and two half-interval
/// estimates agree to `tol` (absolute plus relative).
pub fn adaptive<const N: usize>(
    f: &dyn Fn(f64) -> [f64; N],
    a: f64,
    b: f64,
    tol: f64,
    max_intervals: usize,
) -> Result<[f64; N], AdaptiveFailure> {
    let rule = gauss_legendre(10);
    let panel = |lo: f64, hi: f64| -> [f64; N] {
        let mut acc = [0.0; N];
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
            let v = f(mid + half * t);
            for i in 0..N {
                acc[i] += half * w * v[i];
            }
        }
        acc
    };
    let err_of = |coarse: &[f64; N], fine: &[f64; N]| -> f64 {
        (0..N).map(|i| (coarse[i] - fine[i]).abs()).fold(0.0, f64::max)
    };

    struct Piece<const N: usize> {
        lo: f64,
        hi: f64,
        value: [f64; N],
        err: f64,
    }
    let make = |lo: f64, hi: f64| -> Piece<N> {
        let coarse = panel(lo, hi);
        let mid = 0.5 * (lo + hi);
        let l = panel(lo, mid);
        let r = panel(mid, hi);
        let mut fine = [0.0; N];
        for i in 0..N {
            fine[i] = l[i] + r[i];
        }
        Piece { lo, hi, err: err_of(&coarse, &fine), value: fine }
    };

    let mut pieces = vec![make(a, b)];
    loop {
        let mut total = [0.0; N];
        let mut err = 0.0;
        for p in &pieces {
            for i in 0..N {
                total[i] += p.value[i];
            }
            err += p.err;
        }
        let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !err.is_finite() || !scale.is_finite() {
            return Err(AdaptiveFailure { tol, estimate: total[0], error: err });
        }
        if err <= tol * (1.0 + scale) {
            return Ok(total);
        }
        if pieces.len() >= max_intervals {
            return Err(AdaptiveFailure { tol, estimate: total[0], error: err });
        }
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .fold((0, -1.0), |(bi, be), (i, p)| if p.err > be { (i, p.err) } else { (bi, be) });
        let worst = pieces.swap_remove(idx);
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            return Err(AdaptiveFailure { tol, estimate: total[0], error: err });
        }
        pieces.push(make(worst.lo, mid));
        pieces.push(make(mid, worst.hi));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Family {
    Legendre,
    Hermite,
    HalfNormal,
}

fn cached(family: Family, n: usize, build: impl FnOnce() -> Rule) -> Arc<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<(Family, usize), Arc<Rule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().unwrap().get(&(family, n)) {
        return rule.clone();
    }
    let rule = Arc::new(build());
    cache.lock().unwrap().entry((family, n)).or_insert(rule).clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial(k: i64) -> f64 {
        if k <= 0 {
            1.0
        } else {
            k as f64 * double_factorial(k - 2)
        }
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let r = gauss_legendre(12);
        for k in 0..24 {
            let exact = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
            let got = r.integrate(|x| x.powi(k));
            assert!((got - exact).abs() < 1e-14, "k={k} got={got}");
        }
    }

    #[test]
    fn hermite_matches_gaussian_moments() {
        for n in [16, 64, 128] {
            let r = gauss_hermite(n);
            assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            for k in (0..20).step_by(2) {
                let exact = double_factorial(k as i64 - 1);
                let got = r.integrate(|x| x.powi(k));
                assert!(((got - exact) / exact).abs() < 1e-12, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn high_order_hermite_stays_finite() {
        let h = half_normal(768);
        assert!(h.weights.iter().all(|w| w.is_finite() && *w >= 0.0));
        assert!((h.integrate(|x| x.powi(6)) - 7.5).abs() < 1e-11);
        let r = gauss_hermite(1024);
        assert!(r.weights.iter().all(|w| w.is_finite() && *w >= 0.0));
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((r.integrate(|x| x * x) - 1.0).abs() < 1e-12);
        assert!((r.integrate(|x| x.powi(4)) - 3.0).abs() < 1e-11);
    }

    #[test]
    fn half_normal_matches_half_moments() {
        // E[z^k; z>0] = 2^{k/2 - 1} Γ((k+1)/2) / sqrt(π)
        let gamma_half = |k: usize| -> f64 {
            // Γ((k+1)/2) by recursion from Γ(1/2)=√π, Γ(1)=1
            let mut g = if k % 2 == 0 { std::f64::consts::PI.sqrt() } else { 1.0 };
            let mut a = if k % 2 == 0 { 0.5 } else { 1.0 };
            while a < (k as f64 + 1.0) / 2.0 - 1e-12 {
                g *= a;
                a += 1.0;
            }
            g
        };
        for n in [8, 24, 64] {
            let r = half_normal(n);
            for k in 0..(2 * n).min(30) {
                let exact = 2f64.powf(k as f64 / 2.0 - 1.0) * gamma_half(k) / std::f64::consts::PI.sqrt();
                let got = r.integrate(|x| x.powi(k as i32));
                assert!(((got - exact) / exact).abs() < 1e-12, "n={n} k={k} got={got} exact={exact}");
            }
        }
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let v = adaptive::<1>(&|x| [1.0 / x.sqrt()], 0.0, 1.0, 1e-10, 10_000).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn split_expectation_of_relu() {
        let got = normal_expect_split(32, |z| z.max(0.0));
        assert!((got - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
    }
}
