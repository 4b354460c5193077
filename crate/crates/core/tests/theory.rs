use std::f64::consts::PI;

use faer::Side;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use rfdd_core::activations::{moments, Activation, ActivationMoments};
use rfdd_core::ensemble::{sample_features, EnsembleKind, FeatureEnsemble};
use rfdd_core::losses::{LossKind, LossSpec, Task};
use rfdd_core::predict::{gen_error_closed, predict, Overlaps, PhiHat};
use rfdd_core::saddle::{SaddleConfig, SaddleProblem, TStar, Tolerances};
use rfdd_core::spectral::{mp_density, mp_edges, SpectralLaw};
use rfdd_core::teacher::{expected_moreau, Phi, TeacherSpec};

fn relu_teacher(noise: f64) -> TeacherSpec {
    TeacherSpec { phi: Phi::Relu, rho: 1.0, delta_noise: noise, task: Task::Regression }
}

fn sign_teacher(p: f64) -> TeacherSpec {
    TeacherSpec { phi: Phi::SignFlip { p }, rho: 1.0, delta_noise: 0.0, task: Task::Classification }
}

fn squared() -> LossSpec {
    LossSpec::new(LossKind::Squared, Task::Regression).unwrap()
}

fn classification(kind: LossKind) -> LossSpec {
    LossSpec::new(kind, Task::Classification).unwrap()
}

/// E[g(z)] for z ~ N(0, 1) by the midpoint rule on [-12, 12]; a jump at the
/// origin falls on a cell boundary.
fn midpoint_normal(g: impl Fn(f64) -> f64) -> f64 {
    let cells = 480_000;
    let h = 24.0 / cells as f64;
    (0..cells)
        .map(|i| {
            let z = -12.0 + (i as f64 + 0.5) * h;
            g(z) * (-0.5 * z * z).exp()
        })
        .sum::<f64>()
        * h
        / (2.0 * PI).sqrt()
}

#[test]
fn builtin_moments_are_stable_in_the_order() {
    for act in Activation::builtins() {
        let a = moments(&act, 64).unwrap();
        let b = moments(&act, 128).unwrap();
        for (x, y) in [(a.mu0, b.mu0), (a.mu1, b.mu1), (a.mu_star_sq, b.mu_star_sq)] {
            assert!((x - y).abs() < 1e-10, "{act:?}: {a:?} vs {b:?}");
        }
    }
}

#[test]
fn odd_activations_are_odd_and_centred() {
    for act in Activation::builtins() {
        if !act.is_odd() {
            continue;
        }
        for i in 0..200 {
            let x = -5.0 + 0.05 * i as f64 + 0.013;
            assert_eq!(act.eval(-x), -act.eval(x), "{act:?} at {x}");
        }
        assert!(moments(&act, 64).unwrap().mu0.abs() < 1e-12, "{act:?}");
    }
}

#[test]
fn moment_decomposition_matches_second_moment() {
    for act in Activation::builtins() {
        let m = moments(&act, 64).unwrap();
        let oracle = midpoint_normal(|z| act.eval(z).powi(2));
        assert!((m.second_moment() - oracle).abs() < 1e-8, "{act:?}: {} vs {oracle}", m.second_moment());
        assert!((m.mu0 - midpoint_normal(|z| act.eval(z))).abs() < 1e-8, "{act:?}");
        assert!((m.mu1 - midpoint_normal(|z| z * act.eval(z))).abs() < 1e-8, "{act:?}");
    }
}

#[test]
fn scalar_examples() {
    assert_eq!(Activation::ReLU.eval(-1.5), 0.0);
    assert_eq!(Activation::Sign.eval(0.3), 1.0);
    assert!((Activation::SoftPlus.eval(0.0) - 2f64.ln()).abs() < 1e-15);
    assert!((LossKind::Logistic.prox(0.0, 1.0).unwrap() - 0.4011).abs() < 1e-4);
    assert_eq!(LossKind::Lad.moreau(1.0, 0.5).unwrap(), 0.0);
    assert_eq!(squared().loss_eval(1.0, 3.0), 2.0);
    assert_eq!(classification(LossKind::Hinge).loss_eval(-1.0, -2.0), 0.0);
}

#[test]
fn mp_density_is_normalised() {
    for delta in [0.25, 0.5, 2.0, 4.0] {
        let (a, b) = mp_edges(delta);
        // κ = a + (b - a)(1 - cos φ)/2 removes the square-root edges
        let cells = 200_000;
        let h = PI / cells as f64;
        let total: f64 = (0..cells)
            .map(|i| {
                let phi = (i as f64 + 0.5) * h;
                let k = a + 0.5 * (b - a) * (1.0 - phi.cos());
                mp_density(delta, k) * 0.5 * (b - a) * phi.sin() * h
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "δ = {delta}: {total}");
    }
    assert_eq!(mp_edges(1.0), (0.0, 4.0));
}

#[test]
fn square_gram_matches_mp_mean_and_edges() {
    let n = 400;
    let f = sample_features(&FeatureEnsemble { kind: EnsembleKind::GaussianIid, n, k: n }, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let eigs = (f.transpose() * &f).self_adjoint_eigenvalues(Side::Lower).unwrap();
    let mean = eigs.iter().sum::<f64>() / n as f64;
    let law = SpectralLaw::marchenko_pastur(1.0).unwrap();
    let expected = law.expect(|k| k).unwrap();
    assert!((expected - 1.0).abs() < 1e-9);
    assert!((mean - expected).abs() < 0.02, "{mean}");
    let top = eigs.iter().cloned().fold(0.0, f64::max);
    // Tracy–Widom fluctuations at the edge are of order n^(-2/3)
    assert!((top - 4.0).abs() < 0.25, "{top}");
    assert!(eigs[0] < 0.05);
}

#[test]
fn point_mass_and_empirical_expectations() {
    assert_eq!(SpectralLaw::point_mass(2.0, 1.5).unwrap().expect(|k| k).unwrap(), 2.0);
    let e = SpectralLaw::empirical(vec![3.0, 1.0, 2.0], 2.0).unwrap();
    assert!((e.expect(|k| k * k).unwrap() - 14.0 / 3.0).abs() < 1e-14);
    assert_eq!((e.kappa_min, e.kappa_max), (1.0, 3.0));
    let g2 = SpectralLaw::orthogonal(0.5).unwrap();
    assert_eq!((g2.kappa_min, g2.kappa_max), (1.0, 1.0));
}

fn half_moments() -> ActivationMoments {
    ActivationMoments { mu0: 0.0, mu1: 0.5, mu_star_sq: 0.5 }
}

#[test]
fn point_mass_t_functions_by_hand() {
    let m = half_moments();
    let law = SpectralLaw::point_mass(2.0, 2.0).unwrap();
    let tc = law.t_constants(&m).unwrap();
    assert!((tc.t1 - 4.0).abs() < 1e-12);
    // a point mass has no spread, so T3 vanishes identically
    for delta in [0.5, 2.0, 3.0] {
        let law = SpectralLaw::orthogonal(delta).unwrap();
        let tc = law.t_constants(&m).unwrap();
        for t in [-0.5, 0.0, 0.7, 3.0] {
            assert!(law.t3(&m, &tc, t).unwrap().abs() < 1e-12, "δ = {delta}, t = {t}");
        }
    }
    for (delta, eta) in [(2.0, 1.0), (3.0, 0.4)] {
        let law = SpectralLaw::orthogonal(delta).unwrap();
        let want = eta * (m.mu_star_sq + m.mu1 * m.mu1);
        assert!((law.t4(&m, 0.0, eta).unwrap() - want).abs() < 1e-12);
    }
    let law = SpectralLaw::marchenko_pastur(1.7).unwrap();
    let mut prev = f64::INFINITY;
    for t in [1.0, 10.0, 1e2, 1e4, 1e6] {
        let v = law.t4(&m, t, 1.0).unwrap();
        assert!(v > 0.0 && v < prev);
        prev = v;
    }
    assert!(prev < 1e-5);
}

/// E[M(V; x Z)] by plain Monte Carlo with its standard error.
fn monte_carlo_moreau(
    teacher: &TeacherSpec,
    loss: &LossSpec,
    m: &ActivationMoments,
    (theta, q, beta): (f64, f64, f64),
    x: f64,
    samples: usize,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let unif = Uniform::new(0.0, 1.0).unwrap();
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..samples {
        let s: f64 = StandardNormal.sample(&mut rng);
        let h: f64 = StandardNormal.sample(&mut rng);
        let e: f64 = StandardNormal.sample(&mut rng);
        let v = match teacher.phi {
            Phi::SignFlip { p } => {
                let mut y = if teacher.rho * s >= 0.0 { 1.0 } else { -1.0 };
                if unif.sample(&mut rng) < p {
                    y = -y;
                }
                beta * y * h + m.mu0 * theta * y + m.mu1 * q * y * s
            }
            phi => beta * h + m.mu0 * theta + m.mu1 * q * s - (phi.eval(teacher.rho * s) + teacher.delta_noise * e),
        };
        let val = loss.kind.moreau(v, x).unwrap();
        s1 += val;
        s2 += val * val;
    }
    let n = samples as f64;
    let mean = s1 / n;
    (mean, ((s2 / n - mean * mean) / n).sqrt())
}

#[test]
fn expected_moreau_matches_monte_carlo() {
    let relu = moments(&Activation::ReLU, 64).unwrap();
    let sign = moments(&Activation::Sign, 64).unwrap();
    let cases = [
        (relu_teacher(0.3), squared(), relu, (0.7, 0.4, 0.5), 0.8),
        (sign_teacher(0.1), classification(LossKind::Hinge), relu, (0.3, 0.8, 0.6), 1.3),
        (sign_teacher(0.2), classification(LossKind::Logistic), sign, (0.0, 1.1, 0.4), 0.5),
        (sign_teacher(0.0), classification(LossKind::Lad), relu, (-0.2, 0.9, 0.3), 2.0),
    ];
    for (teacher, loss, m, point, x) in cases {
        let q = expected_moreau(&teacher, &loss, &m, point.0, point.1, point.2, x).unwrap();
        let (mc, se) = monte_carlo_moreau(&teacher, &loss, &m, point, x, 1_000_000);
        assert!((q - mc).abs() < 3.0 * se, "{:?}: {q} vs {mc} ± {se}", loss.kind);
    }
}

#[test]
fn degenerate_point_is_the_envelope_at_zero() {
    let m = moments(&Activation::Sign, 64).unwrap();
    let v = expected_moreau(&sign_teacher(0.0), &classification(LossKind::Hinge), &m, 0.0, 0.0, 0.0, 0.7).unwrap();
    assert!((v - LossKind::Hinge.moreau(0.0, 0.7).unwrap()).abs() < 1e-12);
}

fn problem(teacher: TeacherSpec, loss: LossSpec, act: Activation, law: SpectralLaw, lambda: f64, eta: f64) -> SaddleConfig {
    SaddleConfig { teacher, loss, moments: moments(&act, 64).unwrap(), law, lambda, eta, tol: Tolerances::default() }
}

#[test]
fn objective_by_hand_on_a_point_mass() {
    let teacher = relu_teacher(0.2);
    let cfg = problem(teacher, squared(), Activation::ReLU, SpectralLaw::orthogonal(2.0).unwrap(), 0.3, 1.0);
    let (m, lam, eta) = (cfg.moments, cfg.lambda, cfg.eta);
    let g = teacher.gamma_constants().unwrap();
    let p = SaddleProblem::new(cfg).unwrap();
    // κ = 2, e = 1, d = 2: T1 = κ/μ⋆², T2 = 1/μ⋆², T3 = 0
    let (mss, m1s) = (m.mu_star_sq, m.mu1 * m.mu1);
    let (t1, t2) = (2.0 / mss, 1.0 / mss);
    for (theta, q, beta, t) in [(0.9, 0.3, 0.5, 0.2), (-0.4, -0.6, 1.0, 1.5), (1.2, 0.1, 0.2, -0.05)] {
        let c = mss + 2.0 * m1s;
        let t4 = eta / 2.0 * c / (1.0 + t * c) + eta * 0.5 * mss / (1.0 + t * mss);
        let ev2 = beta * beta + m1s * q * q + g.gamma1 - 2.0 * m.mu1 * q * g.gamma2 + (m.mu0 * theta).powi(2)
            - 2.0 * m.mu0 * theta * g.gamma3;
        let hand = lam * q * q / (2.0 * t1) * (t + t2) - lam * t * beta * beta / 2.0 + ev2 / (2.0 * (1.0 + t4 / lam));
        let got = p.objective(theta, q, beta, t).unwrap();
        assert!((got - hand).abs() < 1e-10, "{got} vs {hand}");
        let env = expected_moreau(&teacher, &squared(), &m, theta, q, beta, t4 / lam).unwrap();
        assert!((got - env - lam * (q * q * (t + t2) / (2.0 * t1) - t * beta * beta / 2.0)).abs() < 1e-10);
    }
}

#[test]
fn inner_objective_is_unimodal_in_t() {
    let cfg = problem(
        sign_teacher(0.1),
        classification(LossKind::Logistic),
        Activation::Tanh,
        SpectralLaw::marchenko_pastur(1.6).unwrap(),
        0.2,
        0.8,
    );
    let p = SaddleProblem::new(cfg).unwrap();
    let (theta, q, beta) = (0.0, 0.4, 0.6);
    let bound = p.theta_bound();
    let ts: Vec<f64> = (0..50).map(|i| -bound + (bound + 20.0) * ((i as f64 + 0.5) / 50.0).powi(2)).collect();
    let fs: Vec<f64> = ts.iter().map(|&t| p.objective(theta, q, beta, t).unwrap()).collect();
    let peak = fs.iter().enumerate().fold(0, |b, (i, v)| if *v > fs[b] { i } else { b });
    assert!(fs[..=peak].windows(2).all(|w| w[1] >= w[0]));
    assert!(fs[peak..].windows(2).all(|w| w[1] <= w[0]));
    let sup = p.inner_sup_t(theta, q, beta).unwrap();
    assert!(sup.value >= fs[peak] - 1e-12);
}

#[test]
fn zero_student_supremum_sits_at_infinity() {
    let cfg = problem(
        sign_teacher(0.1),
        classification(LossKind::Hinge),
        Activation::ReLU,
        SpectralLaw::marchenko_pastur(1.2).unwrap(),
        0.1,
        0.6,
    );
    let p = SaddleProblem::new(cfg.clone()).unwrap();
    let theta = 0.3;
    let sup = p.inner_sup_t(theta, 0.0, 0.0).unwrap();
    assert_eq!(sup.t_star, TStar::Infinity);
    let mut prev = f64::NEG_INFINITY;
    for t in [-0.5, 0.0, 1.0, 10.0, 100.0, 1e4] {
        let f = p.objective(theta, 0.0, 0.0, t).unwrap();
        assert!(f >= prev - 1e-14);
        prev = f;
    }
    assert!(sup.value >= prev);
    // E[hinge(μ0 ϑ Y)] with P(Y = 1) = 1/2
    let a = cfg.moments.mu0 * theta;
    let want = 0.5 * (LossKind::Hinge.eval(a) + LossKind::Hinge.eval(-a));
    assert!((sup.value - want).abs() < 1e-9, "{} vs {want}", sup.value);
}

#[test]
fn generic_and_closed_form_solvers_agree_along_eta() {
    for i in 0..10 {
        let eta = 0.2 + 0.2 * i as f64;
        let cfg = problem(relu_teacher(0.1), squared(), Activation::ReLU, SpectralLaw::marchenko_pastur(2.0 * eta).unwrap(), 1e-2, eta);
        let a = SaddleProblem::new(cfg.clone()).unwrap().solve().unwrap();
        let b = SaddleProblem::closed_form(cfg).unwrap().solve().unwrap();
        assert!((a.cost - b.cost).abs() < 1e-6, "η = {eta}: {} vs {}", a.cost, b.cost);
        for (x, y) in [(a.q_star, b.q_star), (a.beta_star, b.beta_star), (a.theta_star, b.theta_star)] {
            assert!((x - y).abs() < 1e-4, "η = {eta}: {a:?} vs {b:?}");
        }
    }
}

#[test]
fn random_probes_certify_the_minimum() {
    let cfg = problem(
        sign_teacher(0.05),
        classification(LossKind::Hinge),
        Activation::ReLU,
        SpectralLaw::marchenko_pastur(1.5).unwrap(),
        0.1,
        0.75,
    );
    let p = SaddleProblem::new(cfg).unwrap();
    let sol = p.solve().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let unif = Uniform::new(-1.0, 1.0).unwrap();
    let mut probes = 0;
    while probes < 100 {
        let th = sol.theta_star + unif.sample(&mut rng);
        let q = sol.q_star + unif.sample(&mut rng);
        let b = sol.beta_star + unif.sample(&mut rng);
        if b <= 0.0 || p.cone_gap(q, b) <= 1e-9 {
            continue;
        }
        probes += 1;
        let v = p.inner_sup_t(th, q, b).unwrap().value;
        assert!(sol.cost <= v + 1e-9, "probe ({th}, {q}, {b}): {v} < {}", sol.cost);
    }
}

#[test]
fn huge_lambda_cost_is_the_best_constant_predictor() {
    let eta = 0.8;
    let teacher = relu_teacher(0.1);
    let cfg = problem(teacher, squared(), Activation::ReLU, SpectralLaw::marchenko_pastur(2.0 * eta).unwrap(), 1e6, eta);
    let sol = SaddleProblem::new(cfg).unwrap().solve().unwrap();
    let g = teacher.gamma_constants().unwrap();
    assert!((sol.cost - 0.5 * (g.gamma1 - g.gamma3 * g.gamma3)).abs() < 1e-5, "{}", sol.cost);

    let cfg = problem(
        sign_teacher(0.1),
        classification(LossKind::Hinge),
        Activation::Sign,
        SpectralLaw::marchenko_pastur(2.0 * eta).unwrap(),
        1e6,
        eta,
    );
    let sol = SaddleProblem::new(cfg).unwrap().solve().unwrap();
    assert_eq!(sol.theta_star, 0.0);
    assert!((sol.cost - 1.0).abs() < 1e-5, "{}", sol.cost);
}

#[test]
fn training_error_vanishes_towards_interpolation() {
    let mut prev = f64::INFINITY;
    for eta in [0.5, 0.8, 0.95, 0.99] {
        let cfg = problem(relu_teacher(0.1), squared(), Activation::ReLU, SpectralLaw::marchenko_pastur(2.0 * eta).unwrap(), 1e-3, eta);
        let sol = SaddleProblem::closed_form(cfg.clone()).unwrap().solve().unwrap();
        let pair = predict(&sol, &cfg.teacher, &cfg.moments, &PhiHat::Identity).unwrap();
        assert_eq!(pair.train_error, sol.cost);
        assert!(pair.train_error < prev);
        prev = pair.train_error;
    }
    assert!(prev < 0.01, "{prev}");
}

#[test]
fn closed_form_special_values() {
    let m = moments(&Activation::Sign, 64).unwrap();
    let near = gen_error_closed(&Overlaps { theta: 0.0, q: 1.0, beta: 0.0 }, &sign_teacher(0.0), &m, &PhiHat::Sign).unwrap();
    assert_eq!(near, 0.0);
    let coin = gen_error_closed(&Overlaps { theta: 0.0, q: 0.7, beta: 0.3 }, &sign_teacher(0.5), &m, &PhiHat::Sign).unwrap();
    assert!((coin - 0.5).abs() < 1e-15);
    let r = moments(&Activation::ReLU, 64).unwrap();
    let zero = gen_error_closed(&Overlaps { theta: 0.0, q: 0.0, beta: 0.0 }, &relu_teacher(0.0), &r, &PhiHat::Identity).unwrap();
    assert!((zero - 0.5).abs() < 1e-15);
}
