use rfdd_wasm::{moreau_profile, mp_density_curve, theory_curve};
use serde_json::Value;

const CONFIG: &str = r#"
schema_version = 1
task = "regression"
activation = "relu"
loss = "squared"
lambda = 0.01
alpha = 2.0
eta = [0.5, 1.0, 2.0]
n = 100

[teacher]
phi = "relu"
delta = 0.1
"#;

#[test]
fn theory_curve_returns_one_point_per_eta() {
    let v: Value = serde_json::from_str(&theory_curve(CONFIG).unwrap()).unwrap();
    let pts = v.as_array().unwrap();
    assert_eq!(pts.len(), 3);
    for p in pts {
        assert_eq!(p["status"], "ok");
        assert!(p["gen"].as_f64().unwrap() > 0.0);
        assert!(p["train"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn theory_curve_reports_config_errors() {
    let err = theory_curve(&CONFIG.replace("alpha = 2.0", "alpha = -1.0")).unwrap_err();
    assert!(err.contains("alpha"), "{err}");
    assert!(theory_curve("not toml [").is_err());
}

#[test]
fn squared_loss_profile_matches_closed_form() {
    let x = 0.5;
    let v: Value = serde_json::from_str(&moreau_profile("squared", x, -2.0, 2.0, 9).unwrap()).unwrap();
    let a = v["a"].as_array().unwrap();
    assert_eq!(a.len(), 9);
    for (i, ai) in a.iter().enumerate() {
        let ai = ai.as_f64().unwrap();
        let m = v["moreau"][i].as_f64().unwrap();
        let p = v["prox"][i].as_f64().unwrap();
        // for ℓ(v) = v²/2 the envelope is a²/(2(1+x)) and the prox a/(1+x)
        assert!((m - ai * ai / (2.0 * (1.0 + x))).abs() < 1e-14);
        assert!((p - ai / (1.0 + x)).abs() < 1e-14);
        assert!(m <= v["loss"][i].as_f64().unwrap() + 1e-15);
    }
}

#[test]
fn profile_rejects_bad_input() {
    assert!(moreau_profile("cubic", 1.0, 0.0, 1.0, 5).is_err());
    assert!(moreau_profile("hinge", 0.0, 0.0, 1.0, 5).is_err());
    assert!(moreau_profile("hinge", 1.0, 1.0, 0.0, 5).is_err());
    assert!(moreau_profile("Hinge", 1.0, -1.0, 2.0, 5).is_ok());
}

#[test]
fn density_integrates_to_one() {
    for delta in [0.5, 3.0] {
        let v: Value = serde_json::from_str(&mp_density_curve(delta, 20_001).unwrap()).unwrap();
        let k: Vec<f64> = v["kappa"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        let d: Vec<f64> = v["density"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        let mass: f64 = k.windows(2).zip(d.windows(2)).map(|(k, d)| 0.5 * (k[1] - k[0]) * (d[0] + d[1])).sum();
        // trapezoid on square-root edges converges like h^1.5
        assert!((mass - 1.0).abs() < 1e-4, "δ = {delta}: {mass}");
        assert_eq!(v["lower"].as_f64().unwrap(), (1.0 - delta.sqrt()).powi(2));
    }
    assert!(mp_density_curve(0.0, 10).is_err());
    assert!(mp_density_curve(1.0, 1).is_err());
}
