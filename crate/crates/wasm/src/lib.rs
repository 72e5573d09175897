//! Browser bindings for the off-policy evaluation library: the robust
//! predictor's response to the density ratio, a small estimator comparison
//! on a synthetic bandit, and the TR bound calculator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use ope_core::diagnostics::{bound_report, BoundInputs};
use ope_core::estimators::{EstimatorKind, EstimatorSpec, EvaluationSet, ModelTable, ModelTables};
use ope_core::math::{NetShape, SgdConfig};
use ope_core::reward::{train_direct, ShiftedRobustModel};
use ope_core::robust::{
    conditional_gaussian, train_robust, BaseGaussian, DensityRatio, RobustConfig,
};
use ope_core::sim::SyntheticBandit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct CurvePoint {
    ratio: f64,
    mean: f64,
    variance: f64,
}

/// Mean and variance of the robust prediction as the density ratio sweeps
/// `[0, max_ratio]`.
pub fn robust_curve_json(
    rho_r: f64,
    projection: f64,
    mu0: f64,
    sigma0_sq: f64,
    max_ratio: f64,
    points: usize,
) -> Result<String, String> {
    let base = BaseGaussian::new(mu0, sigma0_sq).map_err(|e| e.to_string())?;
    if !(rho_r >= 0.0) || !(max_ratio > 0.0) || !(2..=10_000).contains(&points) {
        return Err("need rho_r >= 0, max_ratio > 0 and 2..=10000 points".into());
    }
    let curve: Vec<CurvePoint> = (0..points)
        .map(|i| {
            let ratio = max_ratio * i as f64 / (points - 1) as f64;
            let p = conditional_gaussian(
                rho_r,
                projection,
                &base,
                DensityRatio::new(ratio, f64::INFINITY).unwrap(),
            );
            CurvePoint {
                ratio,
                mean: p.mean,
                variance: p.variance,
            }
        })
        .collect();
    serde_json::to_string(&curve).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Comparison {
    true_value: f64,
    repeats: usize,
    rows: Vec<ComparisonRow>,
}

#[derive(Serialize)]
struct ComparisonRow {
    estimator: &'static str,
    rmse: f64,
    mean_estimate: f64,
}

fn softmax_table(rng: &mut ChaCha8Rng, rows: usize, k: usize, sharpness: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            let logits: Vec<f64> = (0..k)
                .map(|_| sharpness * rng.gen_range(-1.0..1.0))
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| (v / s).max(1e-3)).collect::<Vec<_>>()
        })
        .map(|row| {
            let s: f64 = row.iter().sum();
            row.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// RMSE of every estimator over `repeats` logged datasets drawn from a random
/// finite bandit. `shift` scales how far the logging and target policies
/// drift apart.
pub fn compare_estimators_json(
    contexts: usize,
    actions: usize,
    samples: usize,
    repeats: usize,
    shift: f64,
    seed: u64,
) -> Result<String, String> {
    if !(1..=20).contains(&repeats) || !(10..=5000).contains(&samples) || !(shift >= 0.0) {
        return Err("need 1..=20 repeats, 10..=5000 samples and shift >= 0".into());
    }
    let err = |e: ope_core::OpeError| e.to_string();
    let bandit = SyntheticBandit::random(contexts, contexts, actions, seed).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let logging = bandit
        .policy(softmax_table(&mut rng, contexts, actions, shift))
        .map_err(err)?;
    let target = bandit
        .policy(softmax_table(&mut rng, contexts, actions, shift))
        .map_err(err)?;
    let truth = bandit.true_value(&target).map_err(err)?;
    let shape = NetShape {
        hidden: vec![16],
        spectral_norm: true,
    };
    let sgd = SgdConfig {
        learning_rate: 0.05,
        epochs: 10,
        batch_size: 8,
        seed,
    };
    let robust_cfg = RobustConfig::default();
    let mut sq = vec![0.0; EstimatorKind::ALL.len()];
    let mut sums = vec![0.0; EstimatorKind::ALL.len()];
    for _ in 0..repeats {
        let log = bandit
            .sample_logged(samples, &logging, &mut rng)
            .map_err(err)?;
        let dm = train_direct(&log, &shape, &sgd).map_err(err)?;
        let rob = train_robust(&log, &target, &logging, &shape, &sgd, &robust_cfg).map_err(err)?;
        let iid = ope_core::robust::train_iid(&log, &shape, &sgd, &robust_cfg).map_err(err)?;
        let shifted = ShiftedRobustModel {
            regressor: &rob,
            target: &target,
            logging: &logging,
            ratio_max: robust_cfg.ratio_max,
        };
        let tables = ModelTables {
            direct: Some(ModelTable::new(&log, &dm).map_err(err)?),
            robust: Some(ModelTable::new(&log, &shifted).map_err(err)?),
            robust_iid: Some(
                ModelTable::new(&log, &ope_core::reward::IidRobustModel { regressor: &iid })
                    .map_err(err)?,
            ),
        };
        let set = EvaluationSet::new(&log, &target, None, f64::INFINITY).map_err(err)?;
        for (i, kind) in EstimatorKind::ALL.into_iter().enumerate() {
            let v = EstimatorSpec::with_defaults(kind)
                .estimate(&set, &tables)
                .map_err(err)?;
            sums[i] += v;
            sq[i] += (v - truth) * (v - truth);
        }
    }
    let n = repeats as f64;
    let rows = EstimatorKind::ALL
        .into_iter()
        .enumerate()
        .map(|(i, k)| ComparisonRow {
            estimator: k.name(),
            rmse: (sq[i] / n).sqrt(),
            mean_estimate: sums[i] / n,
        })
        .collect();
    serde_json::to_string(&Comparison {
        true_value: truth,
        repeats,
        rows,
    })
    .map_err(|e| e.to_string())
}

/// Bias, variance and minimax bounds for a JSON object of [`BoundInputs`]
/// fields; missing fields take their defaults.
pub fn bounds_json(inputs: &str) -> Result<String, String> {
    let mut value: serde_json::Value = serde_json::from_str(inputs).map_err(|e| e.to_string())?;
    let defaults = serde_json::to_value(BoundInputs::default()).map_err(|e| e.to_string())?;
    if let (Some(obj), Some(def)) = (value.as_object_mut(), defaults.as_object()) {
        for (k, v) in def {
            obj.entry(k.clone()).or_insert_with(|| v.clone());
        }
    }
    let x: BoundInputs = serde_json::from_value(value).map_err(|e| e.to_string())?;
    let report = bound_report(&x).map_err(|e| e.to_string())?;
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = robustCurve)]
pub fn robust_curve(
    rho_r: f64,
    projection: f64,
    mu0: f64,
    sigma0_sq: f64,
    max_ratio: f64,
    points: usize,
) -> Result<String, JsError> {
    js(robust_curve_json(
        rho_r, projection, mu0, sigma0_sq, max_ratio, points,
    ))
}

#[wasm_bindgen(js_name = compareEstimators)]
pub fn compare_estimators(
    contexts: usize,
    actions: usize,
    samples: usize,
    repeats: usize,
    shift: f64,
    seed: u64,
) -> Result<String, JsError> {
    js(compare_estimators_json(
        contexts, actions, samples, repeats, shift, seed,
    ))
}

#[wasm_bindgen(js_name = bounds)]
pub fn bounds(inputs: &str) -> Result<String, JsError> {
    js(bounds_json(inputs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_starts_at_the_base() {
        let v: serde_json::Value =
            serde_json::from_str(&robust_curve_json(1.0, 0.2, 0.5, 1.0, 10.0, 11).unwrap())
                .unwrap();
        let pts = v.as_array().unwrap();
        assert_eq!(pts.len(), 11);
        assert_eq!(pts[0]["mean"], 0.5);
        assert_eq!(pts[0]["variance"], 1.0);
        assert!(pts[10]["variance"].as_f64().unwrap() < 0.1);
        assert!(robust_curve_json(-1.0, 0.0, 0.5, 1.0, 1.0, 5).is_err());
    }

    #[test]
    fn comparison_lists_every_estimator() {
        let v: serde_json::Value =
            serde_json::from_str(&compare_estimators_json(4, 3, 200, 2, 1.0, 3).unwrap()).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 13);
        assert!(v["true_value"].as_f64().unwrap() > 0.0);
        assert!(compare_estimators_json(4, 3, 200, 0, 1.0, 3).is_err());
    }

    #[test]
    fn bounds_fill_defaults() {
        let v: serde_json::Value =
            serde_json::from_str(&bounds_json(r#"{"w": 2.0, "n": 100.0}"#).unwrap()).unwrap();
        let expected = (2.0 * 20f64.ln() / 100.0).sqrt();
        assert!((v["bias"].as_f64().unwrap() - expected).abs() < 1e-12);
        assert!(bounds_json(r#"{"l": 0.0}"#).is_err());
        assert!(bounds_json("not json").is_err());
    }
}
