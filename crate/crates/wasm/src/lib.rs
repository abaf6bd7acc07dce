//! Browser bindings for three small computations on a disorder configuration
//! given as JSON: the Lyapunov spectrum, the Weyl-Titchmarsh matrices `M_±`,
//! and the Dirichlet eigenvalues of a finite interval. Each returns a JSON
//! string; the plain-Rust `*_json` functions behind them are what the tests call.

use serde_json::{json, Value};
use trsdirac::lyapunov::{lyapunov_spectrum, vanishing_count, LyapunovOptions};
use trsdirac::mat::c;
use trsdirac::model::{matrix_to_json, sample_realization, CellSource, DisorderConfig, Realization};
use trsdirac::oracle::{default_plane, eigenvalues_in_window, BoundaryValueProblem};
use trsdirac::weyl::{m_matrix, MOptions, Sign};
use wasm_bindgen::prelude::*;

/// Keeps a browser tab responsive.
pub const MAX_CELLS: usize = 200_000;
pub const MAX_LENGTH: usize = 400;

fn realization(config: &str, n_cells: usize) -> Result<Realization, String> {
    let cfg = DisorderConfig::from_json(config).map_err(|e| e.to_string())?;
    let ens = cfg.prepare().map_err(|e| e.to_string())?;
    sample_realization(&ens, cfg.seed, n_cells).map_err(|e| e.to_string())
}

pub fn lyapunov_json(config: &str, re: f64, im: f64, n_cells: usize) -> Result<Value, String> {
    if n_cells > MAX_CELLS {
        return Err(format!("at most {MAX_CELLS} cells in the browser"));
    }
    let src = realization(config, n_cells)?;
    let s = lyapunov_spectrum(&src, c(re, im), n_cells, LyapunovOptions::default()).map_err(|e| e.to_string())?;
    let v = vanishing_count(&s, 0.9973);
    Ok(json!({
        "z": [re, im],
        "gamma": s.gamma,
        "stderr": s.stderr,
        "vanishing_pairs": v.k,
        "warning": v.warning,
    }))
}

pub fn weyl_json(config: &str, re: f64, im: f64) -> Result<Value, String> {
    let src = realization(config, 1)?;
    let z = c(re, im);
    let at = src.offset();
    let mp = m_matrix(&src, z, Sign::Plus, at, MOptions::default()).map_err(|e| e.to_string())?;
    let mm = m_matrix(&src, z, Sign::Minus, at, MOptions::default()).map_err(|e| e.to_string())?;
    Ok(json!({
        "z": [re, im],
        "channels": src.channels(),
        "m_plus": matrix_to_json(&mp.m),
        "m_minus": matrix_to_json(&mm.m),
        "radius_plus": mp.radius,
        "radius_minus": mm.radius,
    }))
}

pub fn eigenvalues_json(config: &str, length: usize, lo: f64, hi: f64) -> Result<Value, String> {
    if length == 0 || length > MAX_LENGTH {
        return Err(format!("interval length must be in 1..={MAX_LENGTH}"));
    }
    if !(lo < hi) {
        return Err("empty energy window".into());
    }
    let src = realization(config, length)?;
    let plane = default_plane(src.channels());
    let bvp = BoundaryValueProblem::new(&src, 1, length, &plane, &plane).map_err(|e| e.to_string())?;
    let scan = eigenvalues_in_window(&bvp, (lo, hi), 0.05, 1e-10).map_err(|e| e.to_string())?;
    let roots: Vec<Value> = scan.roots.iter().map(|r| json!({"e": r.e, "multiplicity": r.multiplicity})).collect();
    Ok(json!({ "length": length, "window": [lo, hi], "count": scan.count(), "roots": roots, "warnings": scan.warnings }))
}

fn to_js(v: Result<Value, String>) -> Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn lyapunov(config: &str, re: f64, im: f64, n_cells: usize) -> Result<String, JsError> {
    to_js(lyapunov_json(config, re, im, n_cells))
}

#[wasm_bindgen]
pub fn weyl(config: &str, re: f64, im: f64) -> Result<String, JsError> {
    to_js(weyl_json(config, re, im))
}

#[wasm_bindgen]
pub fn eigenvalues(config: &str, length: usize, lo: f64, hi: f64) -> Result<String, JsError> {
    to_js(eigenvalues_json(config, length, lo, hi))
}
