//! Browser bindings for the interactive page in `www/`.
//!
//! Every export returns a JSON string so the page needs no glue beyond
//! `JSON.parse`. The `*_json` functions hold the logic and are plain Rust.

use dcf_core::denoise::{drop_fraction, relabel_ratio, DenoiseConfig};
use dcf_core::robustloss::{damp, lower_bound_value};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `φ` sampled on `[0, max_loss]`, plus the raw and damped means of `window`
/// before and after its last entry is replaced by `outlier`.
pub fn damping_json(window: &[f64], outlier: f64, max_loss: f64, steps: usize) -> Result<String, String> {
    if window.is_empty() {
        return Err("window is empty".into());
    }
    if window.iter().chain([&outlier, &max_loss]).any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err("losses must be finite and non-negative".into());
    }
    let steps = steps.clamp(2, 2000);
    let loss: Vec<f64> = (0..steps).map(|k| max_loss * k as f64 / (steps - 1) as f64).collect();
    let damped: Vec<f64> = loss.iter().map(|&l| damp(l)).collect();

    let mut shocked = window.to_vec();
    *shocked.last_mut().expect("non-empty") = outlier;
    let damped_mean = |w: &[f64]| mean(&w.iter().map(|&l| damp(l)).collect::<Vec<_>>());
    Ok(json!({
        "loss": loss,
        "damped": damped,
        "raw_mean": [mean(window), mean(&shocked)],
        "damped_mean": [damped_mean(window), damped_mean(&shocked)],
    })
    .to_string())
}

/// Lower bound against survival count `d = 1..=epoch` for a fixed mean.
pub fn bound_json(mean: f64, sigma2: f64, epoch: u32) -> Result<String, String> {
    if !(0.0..1.0).contains(&sigma2) {
        return Err(format!("sigma2 {sigma2} outside [0, 1)"));
    }
    let epoch = epoch.clamp(1, 500);
    let d: Vec<u32> = (1..=epoch).collect();
    let bound = d
        .iter()
        .map(|&d| lower_bound_value(mean, sigma2, epoch, d))
        .collect::<dcf_core::Result<Vec<f64>>>()
        .map_err(|e| e.to_string())?;
    Ok(json!({ "d": d, "bound": bound, "mean": mean }).to_string())
}

/// Relabel ratio and drop fraction for epochs `1..=epochs`.
pub fn schedule_json(r: f64, o: u32, drop_max: f64, warmup: u32, epochs: u32) -> Result<String, String> {
    if !(0.0..=1.0).contains(&r) || !(0.0..=1.0).contains(&drop_max) {
        return Err("ratios must lie in [0, 1]".into());
    }
    if o == 0 {
        return Err("saturation epoch must be at least 1".into());
    }
    let cfg = DenoiseConfig { drop_max, drop_warmup: warmup, ..Default::default() };
    let epoch: Vec<u32> = (1..=epochs.clamp(1, 500)).collect();
    let relabel: Vec<f64> = epoch.iter().map(|&e| relabel_ratio(e, r, o)).collect();
    let drop: Vec<f64> = epoch.iter().map(|&e| drop_fraction(e, &cfg)).collect();
    Ok(json!({ "epoch": epoch, "relabel": relabel, "drop": drop }).to_string())
}

#[wasm_bindgen]
pub fn damping(window: Vec<f64>, outlier: f64, max_loss: f64, steps: usize) -> Result<String, JsError> {
    damping_json(&window, outlier, max_loss, steps).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn bound_curve(mean: f64, sigma2: f64, epoch: u32) -> Result<String, JsError> {
    bound_json(mean, sigma2, epoch).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn schedules(r: f64, o: u32, drop_max: f64, warmup: u32, epochs: u32) -> Result<String, JsError> {
    schedule_json(r, o, drop_max, warmup, epochs).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn parse(s: Result<String, String>) -> Value {
        serde_json::from_str(&s.unwrap()).unwrap()
    }

    #[test]
    fn outlier_moves_damped_mean_less() {
        let v = parse(damping_json(&[0.5; 5], 100.0, 10.0, 11));
        assert_eq!(v["loss"].as_array().unwrap().len(), 11);
        assert_eq!(v["loss"][10], 10.0);
        assert_eq!(v["damped"][10], (61.0f64).ln());
        let shift = |key: &str| v[key][1].as_f64().unwrap() - v[key][0].as_f64().unwrap();
        assert!((shift("raw_mean") - 19.9).abs() < 1e-12);
        assert!(shift("damped_mean") < 2.0);
        assert!(damping_json(&[], 1.0, 1.0, 3).is_err());
        assert!(damping_json(&[0.1], -1.0, 1.0, 3).is_err());
    }

    #[test]
    fn bound_rises_with_survival() {
        let v = parse(bound_json(0.7, 0.1, 10));
        let b: Vec<f64> = v["bound"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert_eq!(b.len(), 10);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
        assert!(b.iter().all(|&x| x < 0.7));
        assert_eq!(parse(bound_json(0.7, 0.0, 3))["bound"], serde_json::json!([0.7, 0.7, 0.7]));
        assert!(bound_json(0.7, 1.0, 3).is_err());
    }

    #[test]
    fn schedules_saturate() {
        let v = parse(schedule_json(0.2, 4, 0.1, 2, 6));
        assert_eq!(v["relabel"], serde_json::json!([0.05, 0.1, 0.15000000000000002, 0.2, 0.2, 0.2]));
        assert_eq!(v["drop"], serde_json::json!([0.05, 0.1, 0.1, 0.1, 0.1, 0.1]));
        assert!(schedule_json(0.2, 0, 0.1, 2, 6).is_err());
    }
}
