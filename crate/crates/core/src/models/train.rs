//! Mini-batch training with augmentation and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Tape};
use crate::data::{Dataset, FoldSplit, Targets};
use crate::error::{Error, Result};
use crate::models::{inference_rng, ModelBundle, ModelTargets, TargetScale};
use crate::optim::{AdamConfig, AdamState};
use crate::robustness::{
    apply_mask, draw_masks, temporal_dropout_mask, SensorDropoutConfig, TemporalDropoutConfig, MASK_VALUE,
};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Share of the training indices held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub sensor_dropout: Option<SensorDropoutConfig>,
    pub temporal_dropout: Option<TemporalDropoutConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 128,
            patience: 10,
            validation_fraction: 0.1,
            seed: 0,
            adam: AdamConfig::default(),
            sensor_dropout: None,
            temporal_dropout: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction {} not in [0,1)",
                self.validation_fraction
            )));
        }
        if let Some(td) = &self.temporal_dropout {
            td.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MemberLog {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// Epoch whose parameters were kept (`None` without validation data).
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub members: Vec<MemberLog>,
}

/// Trains on the training part of `fold`.
pub fn train(
    model: &mut ModelBundle,
    data: &Dataset,
    folds: &FoldSplit,
    fold: usize,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if fold >= folds.k() {
        return Err(Error::Parameter(format!(
            "fold {fold} out of range for k={}",
            folds.k()
        )));
    }
    train_on_indices(model, data, &folds.training(fold), cfg)
}

/// Trains every member independently on `indices` of `data`.
pub fn train_on_indices(
    model: &mut ModelBundle,
    data: &Dataset,
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if indices.is_empty() {
        return Err(Error::EmptyTraining);
    }
    if data.manifest.sensors != model.manifest.sensors || data.manifest.task != model.manifest.task {
        return Err(Error::Consistency("dataset does not match the model's manifest".into()));
    }
    if cfg.epochs == 0 {
        return Ok(TrainLog {
            members: vec![MemberLog::default(); model.members.len()],
        });
    }

    if let Targets::Values(v) = &data.targets {
        let n = indices.len() as f64;
        let mean = indices.iter().map(|&i| v[i]).sum::<f64>() / n;
        let var = indices.iter().map(|&i| (v[i] - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        model.target_scale = Some(TargetScale { mean, std });
    }

    let mut split_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut split_rng);
    let n_val = if cfg.validation_fraction > 0.0 && shuffled.len() >= 2 {
        ((cfg.validation_fraction * shuffled.len() as f64).ceil() as usize).min(shuffled.len() - 1)
    } else {
        0
    };
    let (val, fit) = shuffled.split_at(n_val);
    let mut fit = fit.to_vec();
    fit.sort_unstable();

    let mut log = TrainLog::default();
    for m in 0..model.members.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(m as u64 + 1);
        log.members
            .push(train_member(model, m, data, &fit, val, cfg, &mut rng)?);
    }
    Ok(log)
}

fn model_targets(model: &ModelBundle, targets: &Targets, rows: &[usize]) -> ModelTargets {
    match targets.select(rows) {
        Targets::Classes(c) => ModelTargets::Classes(c),
        Targets::Values(v) => {
            let s = model.target_scale.unwrap_or(TargetScale { mean: 0.0, std: 1.0 });
            ModelTargets::Values(v.iter().map(|y| (y - s.mean) / s.std).collect())
        }
    }
}

fn batch_blocks(data: &Dataset, rows: &[usize]) -> Vec<Tensor> {
    data.blocks.iter().map(|b| b.select_rows(rows)).collect()
}

fn train_member(
    model: &mut ModelBundle,
    m: usize,
    data: &Dataset,
    fit: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MemberLog> {
    let mut adam = AdamState::new(cfg.adam, &model.members[m].params);
    let mut log = MemberLog::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut wait = 0;
    let n_sensors = model.manifest.sensors.len();
    let mut order = fit.to_vec();

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for rows in order.chunks(cfg.batch_size) {
            let mut blocks = batch_blocks(data, rows);
            if let Some(sd) = &cfg.sensor_dropout {
                let masks = draw_masks(sd, n_sensors, rows.len(), rng)?;
                apply_mask(&mut blocks, &masks, MASK_VALUE);
            }
            let mut inputs = model.member_inputs(m, &blocks)?;
            if let Some(td) = &cfg.temporal_dropout {
                for x in inputs.iter_mut().filter(|x| x.ndim() == 3) {
                    temporal_dropout_mask(x, td, rng)?;
                }
            }
            let targets = model_targets(model, &data.targets, rows);
            let mut tape = Tape::new();
            let loss = model.member_loss(m, &mut tape, &inputs, &targets, true, rng)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Diverged(format!("non-finite training loss at epoch {epoch}")));
            }
            total += value * rows.len() as f64;
            let params = &mut model.members[m].params;
            params.zero_grad();
            tape.backward(loss, params)?;
            adam.update(params)?;
        }
        log.train_loss.push(total / fit.len().max(1) as f64);

        if val.is_empty() {
            continue;
        }
        let v = evaluate_loss(model, m, data, val, cfg.batch_size)?;
        if !v.is_finite() {
            return Err(Error::Diverged(format!("non-finite validation loss at epoch {epoch}")));
        }
        log.validation_loss.push(v);
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, model.members[m].params.clone()));
            log.best_epoch = Some(epoch);
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.members[m].params = params;
    }
    Ok(log)
}

/// Mean per-sample loss of member `m` on `rows`, without augmentation.
fn evaluate_loss(model: &ModelBundle, m: usize, data: &Dataset, rows: &[usize], batch: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut rng = inference_rng();
    for chunk in rows.chunks(batch) {
        let blocks = batch_blocks(data, chunk);
        let inputs = model.member_inputs(m, &blocks)?;
        let targets = model_targets(model, &data.targets, chunk);
        let mut tape = Tape::new();
        let loss = model.member_loss(m, &mut tape, &inputs, &targets, false, &mut rng)?;
        total += tape.value(loss).data()[0] * chunk.len() as f64;
    }
    Ok(total / rows.len() as f64)
}
