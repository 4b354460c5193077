//! The label channel `y = φ(aᵀξ) + Δε` and expectations of Moreau envelopes
//! over the effective scalar variables of the saddle problem.
//!
//! `S` and `H` are independent standard normals, `Y = φ(ρS) + Δε`. For
//! regression `V = βH + μ0ϑ + μ1qS - Y` with scale factor `Z = 1`; for
//! classification `V = βYH + μ0ϑY + μ1qYS` with `Z = Y²`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activations::ActivationMoments;
use crate::losses::{LossError, LossKind, LossSpec, Task};
use crate::quadrature::{gauss_hermite, half_normal};

pub const DEFAULT_S_ORDER: usize = 24;
pub const DEFAULT_H_ORDER: usize = 48;
pub const REFINE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Phi {
    Identity,
    Relu,
    SignFlip { p: f64 },
}

impl Phi {
    /// The deterministic part of φ; for `SignFlip` this is `sign`.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Phi::Identity => x,
            Phi::Relu => x.max(0.0),
            Phi::SignFlip { .. } => sign(x),
        }
    }
}

#[inline]
pub fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub phi: Phi,
    pub rho: f64,
    pub delta_noise: f64,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TeacherError {
    #[error("gamma constants are only defined for the ReLU teacher")]
    UnsupportedTeacher,
    #[error("invalid teacher: {0}")]
    Invalid(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("quadrature refinement stalled: {last} vs {prev} at order {order}")]
    Refinement { order: usize, prev: f64, last: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaConstants {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub chi0: f64,
    pub chi1: f64,
    pub chi2: f64,
}

/// (E[Y²], E[YS], E[Y]) for any supported teacher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelMoments {
    pub second: f64,
    pub cross: f64,
    pub mean: f64,
}

impl TeacherSpec {
    pub fn upsilon(&self) -> i32 {
        match self.task {
            Task::Regression => 0,
            Task::Classification => 1,
        }
    }

    pub fn validate(&self) -> Result<(), TeacherError> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(TeacherError::Invalid(format!("ρ = {} must be nonnegative", self.rho)));
        }
        if !(self.delta_noise >= 0.0 && self.delta_noise.is_finite()) {
            return Err(TeacherError::Invalid(format!("Δ = {} must be nonnegative", self.delta_noise)));
        }
        if let Phi::SignFlip { p } = self.phi {
            if !(0.0..=0.5).contains(&p) {
                return Err(TeacherError::Invalid(format!("flip probability {p} outside [0, 1/2]")));
            }
            if self.task != Task::Classification || self.delta_noise != 0.0 {
                return Err(TeacherError::Invalid("the sign-flip teacher needs classification with Δ = 0".into()));
            }
        }
        Ok(())
    }

    /// Whether labels take both signs with positive probability.
    pub fn labels_have_both_signs(&self) -> bool {
        if self.delta_noise > 0.0 {
            return true;
        }
        match self.phi {
            Phi::Identity | Phi::SignFlip { .. } => self.rho > 0.0,
            Phi::Relu => false,
        }
    }

    pub fn sample_labels<R: Rng + ?Sized>(&self, projections: &[f64], rng: &mut R) -> Vec<f64> {
        projections
            .iter()
            .map(|&u| match self.phi {
                Phi::SignFlip { p } => {
                    let s = sign(u);
                    if p > 0.0 && rng.random::<f64>() < p {
                        -s
                    } else {
                        s
                    }
                }
                phi => {
                    let base = phi.eval(u);
                    if self.delta_noise > 0.0 {
                        let e: f64 = StandardNormal.sample(rng);
                        base + self.delta_noise * e
                    } else {
                        base
                    }
                }
            })
            .collect()
    }

    pub fn gamma_constants(&self) -> Result<GammaConstants, TeacherError> {
        if self.phi != Phi::Relu {
            return Err(TeacherError::UnsupportedTeacher);
        }
        let chi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let (chi1, chi2) = (0.5, 0.5);
        let rho = self.rho;
        Ok(GammaConstants {
            gamma1: rho * rho * chi2 + self.delta_noise * self.delta_noise,
            gamma2: rho * chi1,
            gamma3: rho * chi0,
            chi0,
            chi1,
            chi2,
        })
    }

    pub fn label_moments(&self) -> LabelMoments {
        let (rho, d2) = (self.rho, self.delta_noise * self.delta_noise);
        match self.phi {
            Phi::Identity => LabelMoments { second: rho * rho + d2, cross: rho, mean: 0.0 },
            Phi::Relu => LabelMoments {
                second: 0.5 * rho * rho + d2,
                cross: 0.5 * rho,
                mean: rho / (2.0 * std::f64::consts::PI).sqrt(),
            },
            Phi::SignFlip { p } => LabelMoments {
                second: 1.0,
                cross: if rho > 0.0 { (1.0 - 2.0 * p) * (2.0 / std::f64::consts::PI).sqrt() } else { 0.0 },
                mean: 0.0,
            },
        }
    }
}

/// One quadrature point: `V = s(β) h + ϑ a + q b + c` with scale factor `z`,
/// where `s(β) = sqrt(β² + fold)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Atom {
    w: f64,
    h: f64,
    a: f64,
    b: f64,
    c: f64,
    z: f64,
}

/// Value of E[M(V; x Z)] and its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MoreauEval {
    pub value: f64,
    pub d_theta: f64,
    pub d_q: f64,
    pub d_beta: f64,
    pub d_x: f64,
}

/// A fixed tensor-product rule for E[M(V; x Z)] over the teacher's law.
#[derive(Debug, Clone)]
pub struct MoreauQuadrature {
    kind: LossKind,
    fold: f64,
    atoms: Vec<Atom>,
}

impl MoreauQuadrature {
    pub fn new(teacher: &TeacherSpec, loss: &LossSpec, m: &ActivationMoments) -> Self {
        Self::with_orders(teacher, loss, m, DEFAULT_S_ORDER, DEFAULT_H_ORDER, true)
    }

    /// `s_order` nodes on each half-line for S, `h_order` Gauss–Hermite nodes
    /// for H and for the noise. With `fold_noise` regression noise is merged
    /// into H; otherwise it gets its own dimension.
    pub fn with_orders(
        teacher: &TeacherSpec,
        loss: &LossSpec,
        m: &ActivationMoments,
        s_order: usize,
        h_order: usize,
        fold_noise: bool,
    ) -> Self {
        let sr = half_normal(s_order);
        let hr = gauss_hermite(h_order);
        let mut s_nodes = Vec::with_capacity(2 * sr.len());
        for (&s, &w) in sr.nodes.iter().zip(&sr.weights) {
            s_nodes.push((s, w));
            s_nodes.push((-s, w));
        }
        let noise_nodes: Vec<(f64, f64)> = if teacher.delta_noise > 0.0 {
            let nr = gauss_hermite(h_order);
            nr.nodes.iter().copied().zip(nr.weights.iter().copied()).collect()
        } else {
            vec![(0.0, 1.0)]
        };
        let (mu0, mu1, rho, dn) = (m.mu0, m.mu1, teacher.rho, teacher.delta_noise);
        let mut atoms = Vec::new();
        let mut fold = 0.0;
        match (loss.task, teacher.phi) {
            (Task::Regression, phi) => {
                let eps: Vec<(f64, f64)> = if fold_noise {
                    fold = dn * dn;
                    vec![(0.0, 1.0)]
                } else {
                    noise_nodes.clone()
                };
                for &(s, ws) in &s_nodes {
                    for &(e, we) in &eps {
                        let y = phi.eval(rho * s) + dn * e;
                        for (&h, &wh) in hr.nodes.iter().zip(&hr.weights) {
                            atoms.push(Atom { w: ws * we * wh, h, a: mu0, b: mu1 * s, c: -y, z: 1.0 });
                        }
                    }
                }
            }
            (Task::Classification, Phi::SignFlip { p }) => {
                for &(s, ws) in &s_nodes {
                    let sg = sign(rho * s);
                    for (flip, wf) in [(1.0, 1.0 - p), (-1.0, p)] {
                        if wf == 0.0 {
                            continue;
                        }
                        let y = flip * sg;
                        for (&h, &wh) in hr.nodes.iter().zip(&hr.weights) {
                            atoms.push(Atom { w: ws * wf * wh, h, a: mu0 * y, b: mu1 * y * s, c: 0.0, z: 1.0 });
                        }
                    }
                }
            }
            (Task::Classification, phi) => {
                // Y H has the law of |Y| H since H is symmetric and independent of Y
                for &(s, ws) in &s_nodes {
                    for &(e, we) in &noise_nodes {
                        let y = phi.eval(rho * s) + dn * e;
                        for (&h, &wh) in hr.nodes.iter().zip(&hr.weights) {
                            atoms.push(Atom {
                                w: ws * we * wh,
                                h: y.abs() * h,
                                a: mu0 * y,
                                b: mu1 * y * s,
                                c: 0.0,
                                z: y * y,
                            });
                        }
                    }
                }
            }
        }
        atoms.retain(|a| a.w > 0.0);
        MoreauQuadrature { kind: loss.kind, fold, atoms }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn eval(&self, theta: f64, q: f64, beta: f64, x: f64) -> Result<MoreauEval, LossError> {
        let s = (beta * beta + self.fold).sqrt();
        let ds = if s > 0.0 { beta / s } else { 1.0 };
        let mut out = MoreauEval::default();
        let mut dh = 0.0;
        for at in &self.atoms {
            let v = s * at.h + theta * at.a + q * at.b + at.c;
            let env = self.kind.envelope(v, x * at.z)?;
            let wg = at.w * env.d_a;
            out.value += at.w * env.value;
            out.d_theta += wg * at.a;
            out.d_q += wg * at.b;
            dh += wg * at.h;
            out.d_x += at.w * env.d_x * at.z;
        }
        out.d_beta = dh * ds;
        Ok(out)
    }

    /// E[l(V)], the x → 0 limit of the envelope.
    pub fn loss_expectation(&self, theta: f64, q: f64, beta: f64) -> f64 {
        let s = (beta * beta + self.fold).sqrt();
        self.atoms.iter().map(|at| at.w * self.kind.eval(s * at.h + theta * at.a + q * at.b + at.c)).sum()
    }
}

/// E[M(V; x Z)] with quadrature orders doubled until successive values
/// differ by less than 1e-9.
#[allow(clippy::too_many_arguments)]
pub fn expected_moreau(
    teacher: &TeacherSpec,
    loss: &LossSpec,
    m: &ActivationMoments,
    theta: f64,
    q: f64,
    beta: f64,
    x_scale: f64,
) -> Result<f64, TeacherError> {
    if !(x_scale > 0.0) {
        return Err(LossError::NonPositiveScale(x_scale).into());
    }
    let (mut so, mut ho) = (DEFAULT_S_ORDER, DEFAULT_H_ORDER);
    let mut prev = MoreauQuadrature::with_orders(teacher, loss, m, so, ho, true).eval(theta, q, beta, x_scale)?.value;
    for _ in 0..3 {
        so *= 2;
        ho *= 2;
        let next = MoreauQuadrature::with_orders(teacher, loss, m, so, ho, true).eval(theta, q, beta, x_scale)?.value;
        if (next - prev).abs() < REFINE_TOL * (1.0 + next.abs()) {
            return Ok(next);
        }
        prev = next;
    }
    let last = MoreauQuadrature::with_orders(teacher, loss, m, so * 2, ho * 2, true).eval(theta, q, beta, x_scale)?.value;
    if (last - prev).abs() < 1e3 * REFINE_TOL * (1.0 + last.abs()) {
        Ok(last)
    } else {
        Err(TeacherError::Refinement { order: so * 2, prev, last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn relu_moments() -> ActivationMoments {
        let pi = std::f64::consts::PI;
        ActivationMoments { mu0: 1.0 / (2.0 * pi).sqrt(), mu1: 0.5, mu_star_sq: 0.25 - 0.5 / pi }
    }

    #[test]
    fn sample_label_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = |phi| TeacherSpec { phi, rho: 1.0, delta_noise: 0.0, task: Task::Regression };
        assert_eq!(t(Phi::Identity).sample_labels(&[1.5], &mut rng), vec![1.5]);
        assert_eq!(t(Phi::Relu).sample_labels(&[-2.0], &mut rng), vec![0.0]);
        let s = TeacherSpec { phi: Phi::SignFlip { p: 0.0 }, rho: 1.0, delta_noise: 0.0, task: Task::Classification };
        assert_eq!(s.sample_labels(&[-0.1], &mut rng), vec![-1.0]);
    }

    #[test]
    fn flips_happen_at_rate_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = TeacherSpec { phi: Phi::SignFlip { p: 0.2 }, rho: 1.0, delta_noise: 0.0, task: Task::Classification };
        let y = s.sample_labels(&vec![1.0; 100_000], &mut rng);
        let rate = y.iter().filter(|&&v| v < 0.0).count() as f64 / 1e5;
        assert!((rate - 0.2).abs() < 0.005);
    }

    #[test]
    fn gamma_examples() {
        let t = TeacherSpec { phi: Phi::Relu, rho: 1.0, delta_noise: 0.05, task: Task::Regression };
        let g = t.gamma_constants().unwrap();
        assert!((g.gamma1 - 0.5025).abs() < 1e-15);
        assert!((g.gamma2 - 0.5).abs() < 1e-15);
        assert!((g.gamma3 - 0.398942).abs() < 1e-6);
        let t = TeacherSpec { rho: 2.0, delta_noise: 0.0, ..t };
        let g = t.gamma_constants().unwrap();
        assert!((g.gamma1 - 2.0).abs() < 1e-15 && (g.gamma2 - 1.0).abs() < 1e-15);
        assert!((g.gamma3 - 2.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        let t = TeacherSpec { rho: 0.0, delta_noise: 0.3, ..t };
        let g = t.gamma_constants().unwrap();
        assert!((g.gamma1 - 0.09).abs() < 1e-15 && g.gamma2 == 0.0 && g.gamma3 == 0.0);
        let id = TeacherSpec { phi: Phi::Identity, ..t };
        assert_eq!(id.gamma_constants(), Err(TeacherError::UnsupportedTeacher));
    }

    #[test]
    fn chi_values_match_quadrature() {
        let t = TeacherSpec { phi: Phi::Relu, rho: 1.0, delta_noise: 0.0, task: Task::Regression };
        let g = t.gamma_constants().unwrap();
        let chi0 = crate::quadrature::normal_expect_split(32, |s| s.max(0.0));
        let chi1 = crate::quadrature::normal_expect_split(32, |s| s * s.max(0.0));
        let chi2 = crate::quadrature::normal_expect_split(32, |s| s.max(0.0).powi(2));
        assert!((g.chi0 - chi0).abs() < 1e-14 && (g.chi1 - chi1).abs() < 1e-14 && (g.chi2 - chi2).abs() < 1e-14);
    }

    #[test]
    fn squared_loss_matches_closed_form() {
        let t = TeacherSpec { phi: Phi::Relu, rho: 1.0, delta_noise: 0.1, task: Task::Regression };
        let loss = LossSpec::new(LossKind::Squared, Task::Regression).unwrap();
        let m = relu_moments();
        let g = t.gamma_constants().unwrap();
        let (theta, q, beta, x) = (0.7, 0.4, 0.3, 0.8);
        let ev2 = beta * beta + m.mu1.powi(2) * q * q - 2.0 * m.mu1 * q * g.gamma2 + g.gamma1
            + m.mu0.powi(2) * theta * theta
            - 2.0 * m.mu0 * theta * g.gamma3;
        let got = expected_moreau(&t, &loss, &m, theta, q, beta, x).unwrap();
        assert!((got - ev2 / (2.0 * (1.0 + x))).abs() < 1e-12);
        // at ϑ = γ3/μ0 the mean channel cancels the label mean
        let theta = g.gamma3 / m.mu0;
        let simplified = beta * beta + m.mu1.powi(2) * q * q - 2.0 * m.mu1 * q * g.gamma2 + g.gamma1 - g.gamma3.powi(2);
        let got = expected_moreau(&t, &loss, &m, theta, q, beta, x).unwrap();
        assert!((got - simplified / (2.0 * (1.0 + x))).abs() < 1e-12);
    }

    #[test]
    fn degenerate_point_is_single_envelope() {
        let t = TeacherSpec { phi: Phi::SignFlip { p: 0.0 }, rho: 1.0, delta_noise: 0.0, task: Task::Classification };
        let loss = LossSpec::new(LossKind::Hinge, Task::Classification).unwrap();
        let got = expected_moreau(&t, &loss, &relu_moments(), 0.0, 0.0, 0.0, 0.7).unwrap();
        assert!((got - LossKind::Hinge.moreau(0.0, 0.7).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn folded_and_unfolded_noise_agree() {
        let t = TeacherSpec { phi: Phi::Relu, rho: 1.0, delta_noise: 0.3, task: Task::Regression };
        let loss = LossSpec::new(LossKind::Squared, Task::Regression).unwrap();
        let m = relu_moments();
        let a = MoreauQuadrature::with_orders(&t, &loss, &m, 24, 48, true);
        let b = MoreauQuadrature::with_orders(&t, &loss, &m, 24, 48, false);
        for &(th, q, be, x) in &[(0.1, 0.2, 0.5, 0.3), (-1.0, 1.5, 0.05, 4.0)] {
            let (u, v) = (a.eval(th, q, be, x).unwrap(), b.eval(th, q, be, x).unwrap());
            assert!((u.value - v.value).abs() < 1e-9);
            assert!((u.d_beta - v.d_beta).abs() < 1e-9);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let m = relu_moments();
        let cases = [
            (TeacherSpec { phi: Phi::SignFlip { p: 0.1 }, rho: 1.0, delta_noise: 0.0, task: Task::Classification }, LossKind::Logistic),
            (TeacherSpec { phi: Phi::Relu, rho: 1.0, delta_noise: 0.2, task: Task::Regression }, LossKind::Squared),
            (TeacherSpec { phi: Phi::Identity, rho: 1.0, delta_noise: 0.3, task: Task::Classification }, LossKind::Logistic),
        ];
        for (t, kind) in cases {
            let loss = LossSpec::new(kind, t.task).unwrap();
            let mq = MoreauQuadrature::new(&t, &loss, &m);
            let p = [0.3, 0.8, 0.6, 0.9];
            let base = mq.eval(p[0], p[1], p[2], p[3]).unwrap();
            let grads = [base.d_theta, base.d_q, base.d_beta, base.d_x];
            for i in 0..4 {
                let h = 1e-6;
                let (mut up, mut dn) = (p, p);
                up[i] += h;
                dn[i] -= h;
                let fd = (mq.eval(up[0], up[1], up[2], up[3]).unwrap().value
                    - mq.eval(dn[0], dn[1], dn[2], dn[3]).unwrap().value)
                    / (2.0 * h);
                assert!((fd - grads[i]).abs() < 1e-7, "{kind:?} i={i} fd={fd} an={}", grads[i]);
            }
        }
    }
}
