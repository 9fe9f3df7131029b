//! JSON-in, JSON-out wrappers around perbif for the browser page in `www/`.
//!
//! Each exported function has a plain Rust twin returning
//! `Result<String, String>` so the logic can be tested natively.

use perbif::autonomous::AutonomousProblem;
use perbif::continuation::{branches_from_eigenvalue, ContinuationOptions};
use perbif::lsred::{
    classify_structure, local_predictor, solve_local_roots_any, LsCoefficients, StructureReport,
};
use perbif::weights::{Weight, WeightConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn weight(json: &str) -> Result<Weight, String> {
    let cfg: WeightConfig = serde_json::from_str(json).map_err(|e| e.to_string())?;
    cfg.build().map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct OrbitRow {
    k: usize,
    energy: f64,
    u0: f64,
}

#[derive(Serialize)]
struct PeriodCurve {
    lambda: f64,
    energy: Vec<f64>,
    tau: Vec<f64>,
    /// Levels where `tau = T / k`.
    orbits: Vec<OrbitRow>,
}

/// Period function of `-u'' = lambda u + a u^3` on a log grid of energies.
pub fn period_curve_json(a: f64, lambda: f64, period: f64, k_max: usize) -> Result<String, String> {
    let p = AutonomousProblem::new(a, lambda, period).map_err(|e| e.to_string())?;
    let energy: Vec<f64> = (0..=120)
        .map(|i| 10f64.powf(-4.0 + 0.05 * i as f64))
        .collect();
    let tau = energy
        .iter()
        .map(|&e| p.period_tau(e))
        .collect::<perbif::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let mut orbits = Vec::new();
    for k in 1..=k_max {
        if let Some(o) = p.find_orbit(k).map_err(|e| e.to_string())? {
            orbits.push(OrbitRow {
                k,
                energy: o.e,
                u0: o.u_plus,
            });
        }
    }
    to_json(&PeriodCurve {
        lambda,
        energy,
        tau,
        orbits,
    })
}

#[derive(Serialize)]
struct RootRow {
    index: usize,
    z: f64,
    w: f64,
    regular: bool,
    /// Predicted `u(t)` on a grid at `lambda = 0.99 sigma_k`.
    profile: Vec<f64>,
}

#[derive(Serialize)]
struct LocalAnalysis {
    k: usize,
    sigma: f64,
    coefficients: [f64; 5],
    structure: StructureReport,
    roots: Vec<RootRow>,
    error: Option<String>,
}

/// Reduced-equation coefficients and roots at `sigma_k`.
pub fn local_analysis_json(weight_json: &str, k: usize) -> Result<String, String> {
    let w = weight(weight_json)?;
    let c = LsCoefficients::compute(&w, k).map_err(|e| e.to_string())?;
    let lambda = 0.99 * c.sigma();
    let (roots, error) = match solve_local_roots_any(&c) {
        Ok(r) => (r, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    let mut rows = Vec::new();
    for r in &roots {
        let p = local_predictor(&c, r, lambda).map_err(|e| e.to_string())?;
        let profile = (0..=100)
            .map(|i| p.eval(w.period() * i as f64 / 100.0))
            .collect();
        rows.push(RootRow {
            index: r.index,
            z: r.z,
            w: r.w,
            regular: r.regular,
            profile,
        });
    }
    to_json(&LocalAnalysis {
        k,
        sigma: c.sigma(),
        coefficients: c.values(),
        structure: classify_structure(&c),
        roots: rows,
        error,
    })
}

#[derive(Serialize)]
struct DiagramBranch {
    root: usize,
    termination: &'static str,
    symmetry: String,
    lambda: Vec<f64>,
    /// `max |u|`, signed by `u(0)`.
    amplitude: Vec<f64>,
}

/// Every branch from `sigma_k`, continued down to `lambda_min`.
pub fn branch_diagram_json(weight_json: &str, k: usize, lambda_min: f64) -> Result<String, String> {
    let w = weight(weight_json)?;
    let opts = ContinuationOptions {
        lambda_min: Some(lambda_min),
        ..Default::default()
    };
    let branches = branches_from_eigenvalue(&w, k, &opts).map_err(|e| e.to_string())?;
    let out: Vec<DiagramBranch> = branches
        .iter()
        .map(|b| DiagramBranch {
            root: b.origin.root(),
            termination: b.termination.as_str(),
            symmetry: format!("{:?}", b.symmetry_class),
            lambda: b.points.iter().map(|p| p.lambda).collect(),
            amplitude: b
                .points
                .iter()
                .map(|p| if p.u0 < 0.0 { -p.linf_u } else { p.linf_u })
                .collect(),
        })
        .collect();
    to_json(&out)
}

#[wasm_bindgen]
pub fn period_curve(a: f64, lambda: f64, period: f64, k_max: usize) -> Result<String, JsValue> {
    period_curve_json(a, lambda, period, k_max).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn local_analysis(weight_json: &str, k: usize) -> Result<String, JsValue> {
    local_analysis_json(weight_json, k).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn branch_diagram(weight_json: &str, k: usize, lambda_min: f64) -> Result<String, JsValue> {
    branch_diagram_json(weight_json, k, lambda_min).map_err(|e| JsValue::from_str(&e))
}
