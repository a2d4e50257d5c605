//! Browser bindings for three small demos: the PRS curve, sensor-dropout
//! mask sampling and a tiny cross-validated robustness run.
//!
//! The plain functions return JSON strings and are tested natively; the
//! `#[wasm_bindgen]` wrappers only translate errors.

use msr::harness::{run_cv_experiment, DatasetSource, ExperimentConfig};
use msr::metrics::prs_from_rmse;
use msr::models::{EncoderConfig, TrainConfig};
use msr::robustness::{draw_masks, SensorDropoutConfig, SensorDropoutMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct CurvePoint {
    ratio: f64,
    prs: f64,
}

/// PRS for `steps + 1` evenly spaced error ratios `rmse_miss / rmse_full`
/// in `[0, max_ratio]`.
pub fn prs_curve_json(max_ratio: f64, steps: usize) -> Result<String, String> {
    if !(max_ratio.is_finite() && max_ratio > 0.0) || steps == 0 || steps > 10_000 {
        return Err("need max_ratio > 0 and 1 <= steps <= 10000".into());
    }
    let points = (0..=steps)
        .map(|i| {
            let ratio = max_ratio * i as f64 / steps as f64;
            prs_from_rmse(ratio, 1.0)
                .map(|prs| CurvePoint { ratio, prs })
                .map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct MaskSample {
    masks: Vec<Vec<bool>>,
    /// Fraction of samples in which each sensor was kept.
    kept: Vec<f64>,
}

/// `batch` training-time sensor masks over `n_sensors` sensors. A ratio of
/// `None` draws uniformly among the sensor combinations instead.
pub fn sample_masks_json(n_sensors: usize, ratio: Option<f64>, batch: usize, seed: u64) -> Result<String, String> {
    if n_sensors == 0 || n_sensors > 16 || batch == 0 || batch > 10_000 {
        return Err("need 1..=16 sensors and 1..=10000 samples".into());
    }
    let maskable: Vec<usize> = (0..n_sensors).collect();
    let mode = match ratio {
        Some(ratio) => SensorDropoutMode::Ratio { ratio },
        None => SensorDropoutMode::Combinations,
    };
    let config = SensorDropoutConfig { mode, maskable };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masks = draw_masks(&config, n_sensors, batch, &mut rng).map_err(|e| e.to_string())?;
    let kept = (0..n_sensors)
        .map(|s| masks.iter().filter(|m| m.is_available(s)).count() as f64 / batch as f64)
        .collect();
    serde_json::to_string(&MaskSample {
        masks: masks.into_iter().map(|m| m.0).collect(),
        kept,
    })
    .map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct DemoSeries {
    method: String,
    sensor: String,
    percent: Vec<f64>,
    prs: Vec<f64>,
    score: Vec<f64>,
}

/// Trains the listed methods (comma separated) on one fold of a small
/// synthetic three-sensor dataset and reports PRS per missingness level
/// when the most informative sensor goes missing.
pub fn tiny_experiment_json(methods: &str, samples: usize, epochs: usize, seed: u64) -> Result<String, String> {
    let methods: Vec<String> = methods
        .split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(String::from)
        .collect();
    if methods.is_empty() {
        return Err("no methods given".into());
    }
    if !(30..=600).contains(&samples) || !(1..=200).contains(&epochs) {
        return Err("need 30..=600 samples and 1..=200 epochs".into());
    }
    let mut config = ExperimentConfig::new(
        DatasetSource::Preset {
            preset: "synthetic-3".into(),
            n_samples: samples,
            seed,
        },
        methods,
    );
    config.seed = seed;
    config.k = 3;
    config.folds = Some(vec![0]);
    config.scenarios = Some(vec![vec!["primary".into()]]);
    config.encoder = EncoderConfig {
        embedding_dim: 16,
        ..EncoderConfig::default()
    };
    config.train = TrainConfig {
        epochs,
        batch_size: 64,
        ..TrainConfig::default()
    };
    let data = config.load_dataset().map_err(|e| e.to_string())?;
    let report = run_cv_experiment(&config, &data).map_err(|e| e.to_string())?;
    if let Some(err) = report.error {
        return Err(err);
    }
    let series: Vec<DemoSeries> = config
        .methods
        .iter()
        .map(|m| {
            let points = report.series(m, "primary");
            DemoSeries {
                method: m.clone(),
                sensor: "primary".into(),
                percent: points.iter().map(|a| a.percent).collect(),
                prs: points.iter().map(|a| a.prs_mean).collect(),
                score: points.iter().map(|a| a.score_mean).collect(),
            }
        })
        .collect();
    serde_json::to_string(&series).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn prs_curve(max_ratio: f64, steps: usize) -> Result<String, JsError> {
    prs_curve_json(max_ratio, steps).map_err(|e| JsError::new(&e))
}

/// A negative ratio selects combination sampling.
#[wasm_bindgen]
pub fn sample_masks(n_sensors: usize, ratio: f64, batch: usize, seed: u32) -> Result<String, JsError> {
    let ratio = (ratio >= 0.0).then_some(ratio);
    sample_masks_json(n_sensors, ratio, batch, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn tiny_experiment(methods: &str, samples: usize, epochs: usize, seed: u32) -> Result<String, JsError> {
    tiny_experiment_json(methods, samples, epochs, u64::from(seed)).map_err(|e| JsError::new(&e))
}
