//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a JSON string so the page only needs `JSON.parse`.
//! Errors come back as strings and surface as exceptions on the JS side.

use rfdd_core::experiment::{fmt_f64, theory_sweep, ExperimentConfig};
use rfdd_core::losses::LossKind;
use rfdd_core::spectral::{mp_density, mp_edges};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct CurvePoint {
    lambda: f64,
    eta: f64,
    train: Option<f64>,
    gen: Option<f64>,
    status: String,
}

/// Theory training and generalization errors for a TOML configuration.
/// Only the theory engine runs, whatever `engine` says.
#[wasm_bindgen]
pub fn theory_curve(config_toml: &str) -> Result<String, String> {
    let cfg = ExperimentConfig::from_toml(config_toml).map_err(|e| e.to_string())?;
    let rows = theory_sweep(&cfg).map_err(|e| e.to_string())?;
    let points: Vec<CurvePoint> = rows
        .into_iter()
        .map(|(lambda, eta, r)| CurvePoint { lambda, eta, train: r.train, gen: r.gen, status: r.status })
        .collect();
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Profile {
    a: Vec<f64>,
    loss: Vec<f64>,
    moreau: Vec<f64>,
    prox: Vec<f64>,
}

/// Loss, Moreau envelope and proximal point at scale `x` on `points`
/// equally spaced values of `a` in `[a_min, a_max]`.
#[wasm_bindgen]
pub fn moreau_profile(loss: &str, x: f64, a_min: f64, a_max: f64, points: usize) -> Result<String, String> {
    let kind: LossKind =
        serde_json::from_value(serde_json::Value::String(loss.to_ascii_lowercase())).map_err(|_| format!("unknown loss {loss:?}"))?;
    if points < 2 || a_max.partial_cmp(&a_min) != Some(std::cmp::Ordering::Greater) {
        return Err("need at least two points on a non-empty interval".into());
    }
    let mut p = Profile { a: Vec::new(), loss: Vec::new(), moreau: Vec::new(), prox: Vec::new() };
    for i in 0..points {
        let a = a_min + (a_max - a_min) * i as f64 / (points - 1) as f64;
        p.a.push(a);
        p.loss.push(kind.eval(a));
        p.moreau.push(kind.moreau(a, x).map_err(|e| e.to_string())?);
        p.prox.push(kind.prox(a, x).map_err(|e| e.to_string())?);
    }
    serde_json::to_string(&p).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Density {
    kappa: Vec<f64>,
    density: Vec<f64>,
    lower: f64,
    upper: f64,
}

/// Marchenko–Pastur density at aspect ratio δ (the law of the nonzero
/// eigenvalues, so it integrates to one), sampled on `points` values spanning the support.
#[wasm_bindgen]
pub fn mp_density_curve(delta: f64, points: usize) -> Result<String, String> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(format!("δ must be positive, got {}", fmt_f64(delta)));
    }
    if points < 2 {
        return Err("need at least two points".into());
    }
    let (lower, upper) = mp_edges(delta);
    let kappa: Vec<f64> = (0..points).map(|i| lower + (upper - lower) * i as f64 / (points - 1) as f64).collect();
    let density = kappa.iter().map(|&k| mp_density(delta, k)).collect();
    serde_json::to_string(&Density { kappa, density, lower, upper }).map_err(|e| e.to_string())
}
