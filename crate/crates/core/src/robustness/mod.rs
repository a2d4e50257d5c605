//! Training-time masking (sensor dropout, combinatorial sensor dropout,
//! temporal dropout) and inference-time handlers for unavailable sensors
//! (imputation, exemplar lookup, ignoring).

mod cca;
mod exemplar;

pub use cca::{cca_fit, CcaProjection};
pub use exemplar::{exemplar_lookup, ExemplarMatch, Gallery};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, NormalizationStats};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Value written into masked sensor blocks and dropped time steps. In
/// z-scored space it coincides with the training mean.
pub const MASK_VALUE: f64 = 0.0;

/// Per-sensor availability flags (`true` = available).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskVector(pub Vec<bool>);

impl MaskVector {
    pub fn all_available(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_available(&self, sensor: usize) -> bool {
        self.0[sensor]
    }

    pub fn available_count(&self) -> usize {
        self.0.iter().filter(|&&a| a).count()
    }

    pub fn is_full(&self) -> bool {
        self.0.iter().all(|&a| a)
    }

    pub fn with_missing(n: usize, missing: &[usize]) -> Self {
        let mut m = Self::all_available(n);
        for &s in missing {
            m.0[s] = false;
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SensorDropoutMode {
    /// Each maskable sensor is removed independently with probability `ratio`.
    Ratio { ratio: f64 },
    /// One of the `2^m − 1` combinations of maskable sensors that keep at
    /// least one of them is picked uniformly.
    Combinations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorDropoutConfig {
    pub mode: SensorDropoutMode,
    /// Sensor indices that may be masked; all others are always kept.
    pub maskable: Vec<usize>,
}

impl SensorDropoutConfig {
    /// Ratio mode over the temporal sensors of `manifest`.
    pub fn ratio(ratio: f64, manifest: &DatasetManifest) -> Result<Self> {
        check_ratio(ratio)?;
        Ok(Self {
            mode: SensorDropoutMode::Ratio { ratio },
            maskable: manifest.temporal_indices(),
        })
    }

    /// Combinations mode over the temporal sensors of `manifest`.
    pub fn combinations(manifest: &DatasetManifest) -> Self {
        Self {
            mode: SensorDropoutMode::Combinations,
            maskable: manifest.temporal_indices(),
        }
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if (0.0..=1.0).contains(&ratio) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("sensor dropout ratio {ratio} not in [0,1]")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalDropoutConfig {
    pub ratio: f64,
    #[serde(default)]
    pub mask_value: f64,
}

impl TemporalDropoutConfig {
    pub fn new(ratio: f64) -> Result<Self> {
        let cfg = Self {
            ratio,
            mask_value: MASK_VALUE,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..1.0).contains(&self.ratio) {
            Ok(())
        } else {
            Err(Error::Parameter(format!(
                "temporal dropout ratio {} not in [0,1)",
                self.ratio
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SharedSpace {
    /// Concatenated encoder embeddings of the available sensors.
    Raw,
    /// Per-pair CCA projections; `components` defaults to half the embedding width.
    Cca {
        #[serde(default)]
        components: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExemplarOptions {
    /// Cap on gallery entries (evenly spaced over the training samples).
    #[serde(default)]
    pub gallery_size: Option<usize>,
    #[serde(default = "default_shared_space")]
    pub shared_space: SharedSpace,
}

fn default_shared_space() -> SharedSpace {
    SharedSpace::Raw
}

impl Default for ExemplarOptions {
    fn default() -> Self {
        Self {
            gallery_size: None,
            shared_space: SharedSpace::Raw,
        }
    }
}

/// Inference-time rule for unavailable sensors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum MissingPolicy {
    /// Training-set feature means (zeros once z-scored).
    MeanImpute,
    /// The temporal-dropout masking value.
    TdValueImpute { value: f64 },
    /// Nearest training sample in embedding space (cosine similarity).
    Exemplar(ExemplarOptions),
    /// Drop unavailable sensors from the prediction average.
    Ignore,
}

/// One raw Bernoulli draw over the sensors, without the all-masked redraw.
pub fn bernoulli_draw<R: Rng + ?Sized>(
    config: &SensorDropoutConfig,
    n_sensors: usize,
    rng: &mut R,
) -> Result<MaskVector> {
    let SensorDropoutMode::Ratio { ratio } = config.mode else {
        return Err(Error::Parameter("Bernoulli draw requires ratio mode".into()));
    };
    check_ratio(ratio)?;
    let mut mask = MaskVector::all_available(n_sensors);
    for &s in &config.maskable {
        if s >= n_sensors {
            return Err(Error::Parameter(format!("maskable sensor {s} out of range")));
        }
        mask.0[s] = rng.gen::<f64>() >= ratio;
    }
    Ok(mask)
}

/// Independent sensor masks for `batch` samples. A draw that removes every
/// sensor of a sample is repeated.
pub fn draw_bernoulli_mask<R: Rng + ?Sized>(
    config: &SensorDropoutConfig,
    n_sensors: usize,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<MaskVector>> {
    if let SensorDropoutMode::Ratio { ratio } = config.mode {
        let every_sensor_maskable = (0..n_sensors).all(|s| config.maskable.contains(&s));
        if ratio >= 1.0 && every_sensor_maskable && n_sensors > 0 {
            return Err(Error::Parameter(
                "ratio 1 masks every sensor of every sample; no valid draw exists".into(),
            ));
        }
    }
    (0..batch)
        .map(|_| loop {
            let mask = bernoulli_draw(config, n_sensors, rng)?;
            if mask.available_count() > 0 {
                break Ok(mask);
            }
        })
        .collect()
}

/// Every availability pattern over `n_sensors` that keeps at least one
/// sensor, starting with the all-available mask.
pub fn enumerate_missing_combinations(n_sensors: usize) -> Result<Vec<MaskVector>> {
    if n_sensors == 0 {
        return Err(Error::Parameter("empty sensor set".into()));
    }
    if n_sensors >= usize::BITS as usize - 1 {
        return Err(Error::Parameter(format!(
            "{n_sensors} sensors is too many to enumerate"
        )));
    }
    let full = (1usize << n_sensors) - 1;
    Ok((1..=full)
        .rev()
        .map(|code| MaskVector((0..n_sensors).map(|s| code & (1 << s) != 0).collect()))
        .collect())
}

/// Masks for `batch` samples, each a uniformly chosen combination of the
/// maskable sensors; non-maskable sensors stay available.
pub fn draw_combination_mask<R: Rng + ?Sized>(
    config: &SensorDropoutConfig,
    n_sensors: usize,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<MaskVector>> {
    if config.maskable.is_empty() {
        return Ok(vec![MaskVector::all_available(n_sensors); batch]);
    }
    let combos = enumerate_missing_combinations(config.maskable.len())?;
    (0..batch)
        .map(|_| {
            let pick = &combos[rng.gen_range(0..combos.len())];
            let mut mask = MaskVector::all_available(n_sensors);
            for (k, &s) in config.maskable.iter().enumerate() {
                if s >= n_sensors {
                    return Err(Error::Parameter(format!("maskable sensor {s} out of range")));
                }
                mask.0[s] = pick.0[k];
            }
            Ok(mask)
        })
        .collect()
}

/// Dispatches on the configured mode.
pub fn draw_masks<R: Rng + ?Sized>(
    config: &SensorDropoutConfig,
    n_sensors: usize,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<MaskVector>> {
    match config.mode {
        SensorDropoutMode::Ratio { .. } => draw_bernoulli_mask(config, n_sensors, batch, rng),
        SensorDropoutMode::Combinations => draw_combination_mask(config, n_sensors, batch, rng),
    }
}

/// Overwrites the blocks of unavailable sensors with `value`, per sample.
/// `blocks[s]` holds sensor `s` for the whole batch (`[n, ...]`).
pub fn apply_mask(blocks: &mut [Tensor], masks: &[MaskVector], value: f64) {
    for (s, block) in blocks.iter_mut().enumerate() {
        for (i, mask) in masks.iter().enumerate() {
            if !mask.is_available(s) {
                block.row_mut(i).fill(value);
            }
        }
    }
}

/// Replaces randomly chosen time steps of `block` (`[n, T, F]`) with the
/// masking value across all features. Returns the number of dropped steps
/// per sample.
pub fn temporal_dropout_mask<R: Rng + ?Sized>(
    block: &mut Tensor,
    config: &TemporalDropoutConfig,
    rng: &mut R,
) -> Result<Vec<usize>> {
    config.validate()?;
    if block.ndim() != 3 {
        return Err(Error::Dimension(format!("temporal dropout on {:?}", block.shape())));
    }
    let (n, t, f) = (block.shape()[0], block.shape()[1], block.shape()[2]);
    let mut dropped = vec![0; n];
    if config.ratio == 0.0 {
        return Ok(dropped);
    }
    let data = block.data_mut();
    for (b, count) in dropped.iter_mut().enumerate() {
        for step in 0..t {
            if rng.gen::<f64>() < config.ratio {
                data[(b * t + step) * f..(b * t + step + 1) * f].fill(config.mask_value);
                *count += 1;
            }
        }
    }
    Ok(dropped)
}

/// Fills unavailable sensors of one sample (`blocks[s]` is `[T,D]` or `[D]`).
pub fn impute_missing(
    blocks: &mut [Tensor],
    availability: &MaskVector,
    policy: &MissingPolicy,
    stats: Option<&NormalizationStats>,
) -> Result<()> {
    if availability.is_full() {
        return Ok(());
    }
    match policy {
        MissingPolicy::MeanImpute => {
            let stats = stats.ok_or(Error::MissingStats)?;
            for (s, block) in blocks.iter_mut().enumerate() {
                if availability.is_available(s) {
                    continue;
                }
                let mean = &stats.sensors.get(s).ok_or(Error::MissingStats)?.mean;
                for chunk in block.data_mut().chunks_mut(mean.len().max(1)) {
                    chunk.copy_from_slice(mean);
                }
            }
            Ok(())
        }
        MissingPolicy::TdValueImpute { value } => {
            for (s, block) in blocks.iter_mut().enumerate() {
                if !availability.is_available(s) {
                    block.data_mut().fill(*value);
                }
            }
            Ok(())
        }
        other => Err(Error::Config(format!("{other:?} is not an imputation policy"))),
    }
}

/// Batch form of [`impute_missing`] over `[n, ...]` sensor blocks.
pub fn impute_batch(
    blocks: &mut [Tensor],
    availability: &[MaskVector],
    policy: &MissingPolicy,
    stats: Option<&NormalizationStats>,
) -> Result<()> {
    for (i, mask) in availability.iter().enumerate() {
        if mask.is_full() {
            continue;
        }
        for (s, block) in blocks.iter_mut().enumerate() {
            if mask.is_available(s) {
                continue;
            }
            let row = block.row_mut(i);
            match policy {
                MissingPolicy::MeanImpute => {
                    let mean = &stats
                        .ok_or(Error::MissingStats)?
                        .sensors
                        .get(s)
                        .ok_or(Error::MissingStats)?
                        .mean;
                    for chunk in row.chunks_mut(mean.len().max(1)) {
                        chunk.copy_from_slice(mean);
                    }
                }
                MissingPolicy::TdValueImpute { value } => row.fill(*value),
                other => return Err(Error::Config(format!("{other:?} is not an imputation policy"))),
            }
        }
    }
    Ok(())
}
