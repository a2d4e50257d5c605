//! Latent-factor generator for partially redundant multi-sensor data.
//!
//! Each sample draws a latent `z ~ N(0, I_L)`. The target is a function of
//! `z`; each sensor observes its own view `h_s = sqrt(ρ)·z + sqrt(1−ρ)·u_s`
//! (with a private `u_s ~ N(0, I_L)`) through a random linear map, a
//! per-sensor seasonal modulation over time, fixed offsets, and Gaussian noise.
//! Trailing one-hot columns, when requested, encode the argmax of a second
//! random projection of `h_s`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{write_dataset, Dataset, DatasetManifest, SensorKind, SensorSpec, Targets, Task};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSensor {
    pub name: String,
    pub kind: SensorKind,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timesteps: Option<usize>,
    /// Standard deviation of the additive observation noise.
    pub noise: f64,
    /// Number of trailing one-hot categorical columns (counted in `dim`).
    #[serde(default)]
    pub one_hot: usize,
}

impl SynthSensor {
    fn temporal(name: &str, dim: usize, timesteps: usize, noise: f64) -> Self {
        Self {
            name: name.into(),
            kind: SensorKind::Temporal,
            dim,
            timesteps: Some(timesteps),
            noise,
            one_hot: 0,
        }
    }

    fn static_(name: &str, dim: usize, noise: f64, one_hot: usize) -> Self {
        Self {
            name: name.into(),
            kind: SensorKind::Static,
            dim,
            timesteps: None,
            noise,
            one_hot,
        }
    }

    pub fn spec(&self) -> SensorSpec {
        SensorSpec {
            name: self.name.clone(),
            kind: self.kind,
            dim: self.dim,
            timesteps: self.timesteps,
            passthrough: (self.dim - self.one_hot.min(self.dim)..self.dim).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub name: String,
    pub task: Task,
    pub sensors: Vec<SynthSensor>,
    pub n_samples: usize,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    /// Share of each sensor's view that comes from the common latent, in `[0, 1]`.
    #[serde(default = "default_redundancy")]
    pub redundancy: f64,
    /// Noise added to the target before labelling.
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_latent_dim() -> usize {
    4
}

fn default_redundancy() -> f64 {
    0.8
}

pub const PRESETS: &[&str] = &["cropharvest-like", "lfmc-like", "pm25-like", "synthetic-3"];

/// Built-in generator configurations. The first three follow the per-sensor
/// feature counts of the crop-type, fuel-moisture and PM2.5 datasets.
pub fn preset(name: &str, n_samples: usize, seed: u64) -> Result<GeneratorConfig> {
    let (task, sensors, label_noise) = match name {
        "cropharvest-like" => (
            Task::Classification { classes: 4 },
            vec![
                SynthSensor::temporal("optical", 11, 12, 0.3),
                SynthSensor::temporal("radar", 2, 12, 0.6),
                SynthSensor::temporal("weather", 2, 12, 0.8),
                SynthSensor::static_("static", 2, 0.5, 0),
            ],
            0.3,
        ),
        "lfmc-like" => (
            Task::Regression,
            vec![
                SynthSensor::temporal("optical", 8, 8, 0.3),
                SynthSensor::temporal("radar", 3, 8, 0.6),
                SynthSensor::static_("static", 7, 0.5, 5),
            ],
            0.3,
        ),
        "pm25-like" => (
            Task::Regression,
            vec![
                SynthSensor::temporal("conditions", 3, 24, 0.5),
                SynthSensor::temporal("dynamics", 4, 24, 0.4),
                SynthSensor::temporal("precipitation", 2, 24, 0.8),
            ],
            0.3,
        ),
        "synthetic-3" => (
            Task::Classification { classes: 3 },
            vec![
                SynthSensor::temporal("primary", 6, 8, 0.2),
                SynthSensor::temporal("secondary", 3, 8, 1.0),
                SynthSensor::temporal("tertiary", 3, 8, 1.0),
            ],
            0.2,
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(GeneratorConfig {
        name: name.to_string(),
        task,
        sensors,
        n_samples,
        latent_dim: default_latent_dim(),
        redundancy: default_redundancy(),
        label_noise,
        seed,
    })
}

impl GeneratorConfig {
    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            name: self.name.clone(),
            task: self.task,
            sensors: self.sensors.iter().map(SynthSensor::spec).collect(),
            n_samples: self.n_samples,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.redundancy) {
            return Err(Error::Config(format!("redundancy {} not in [0,1]", self.redundancy)));
        }
        if self.label_noise < 0.0 || !self.label_noise.is_finite() {
            return Err(Error::Config("label_noise must be finite and >= 0".into()));
        }
        for s in &self.sensors {
            if s.noise < 0.0 || !s.noise.is_finite() {
                return Err(Error::Config(format!("sensor `{}` noise must be >= 0", s.name)));
            }
            if s.one_hot == 1 || s.one_hot > s.dim {
                return Err(Error::Config(format!(
                    "sensor `{}` one_hot must be 0 or in [2, dim]",
                    s.name
                )));
            }
        }
        self.manifest().validate()
    }

    /// Generates the dataset in memory.
    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let l = self.latent_dim;
        let n = self.n_samples;
        let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

        // Structural draws first so that they do not depend on n.
        let out_dim = self.task.output_dim();
        let target_map: Vec<f64> = (0..l * out_dim).map(|_| normal(&mut rng)).collect();
        struct Structure {
            map: Vec<f64>,
            cat_map: Vec<f64>,
            offsets: Vec<f64>,
            scales: Vec<f64>,
            phase: f64,
        }
        let structures: Vec<Structure> = self
            .sensors
            .iter()
            .map(|s| {
                let cont = s.dim - s.one_hot;
                Structure {
                    map: (0..l * cont).map(|_| normal(&mut rng) / (l as f64).sqrt()).collect(),
                    cat_map: (0..l * s.one_hot).map(|_| normal(&mut rng)).collect(),
                    offsets: (0..cont).map(|_| rng.gen_range(-2.0..5.0)).collect(),
                    scales: (0..cont).map(|_| rng.gen_range(0.5..3.0)).collect(),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                }
            })
            .collect();

        let shared = self.redundancy.sqrt();
        let private = (1.0 - self.redundancy).sqrt();
        let mut blocks: Vec<Vec<f64>> = self
            .sensors
            .iter()
            .map(|s| Vec::with_capacity(n * s.timesteps.unwrap_or(1) * s.dim))
            .collect();
        let mut classes = Vec::new();
        let mut values = Vec::new();
        let label_noise = Normal::new(0.0, self.label_noise.max(f64::MIN_POSITIVE)).expect("valid standard deviation");

        for _ in 0..n {
            let z: Vec<f64> = (0..l).map(|_| normal(&mut rng)).collect();
            let mut scores: Vec<f64> = (0..out_dim)
                .map(|k| (0..l).map(|j| z[j] * target_map[j * out_dim + k]).sum::<f64>())
                .collect();
            if self.label_noise > 0.0 {
                for s in &mut scores {
                    *s += label_noise.sample(&mut rng);
                }
            }
            match self.task {
                Task::Classification { .. } => classes.push(argmax(&scores)),
                Task::Regression => values.push(10.0 + 3.0 * scores[0] / (l as f64).sqrt()),
            }

            for ((spec, st), out) in self.sensors.iter().zip(&structures).zip(&mut blocks) {
                let h: Vec<f64> = z.iter().map(|&zj| shared * zj + private * normal(&mut rng)).collect();
                let cont = spec.dim - spec.one_hot;
                let signal: Vec<f64> = (0..cont)
                    .map(|f| (0..l).map(|j| h[j] * st.map[j * cont + f]).sum::<f64>())
                    .collect();
                let category = if spec.one_hot > 0 {
                    let cat_scores: Vec<f64> = (0..spec.one_hot)
                        .map(|c| (0..l).map(|j| h[j] * st.cat_map[j * spec.one_hot + c]).sum::<f64>())
                        .collect();
                    Some(argmax(&cat_scores))
                } else {
                    None
                };
                let t_len = spec.timesteps.unwrap_or(1);
                for t in 0..t_len {
                    let season = match spec.kind {
                        SensorKind::Temporal => {
                            1.0 + 0.5 * (std::f64::consts::TAU * t as f64 / t_len as f64 + st.phase).sin()
                        }
                        SensorKind::Static => 1.0,
                    };
                    for f in 0..cont {
                        let noise = if spec.noise > 0.0 {
                            spec.noise * normal(&mut rng)
                        } else {
                            0.0
                        };
                        out.push(st.offsets[f] + st.scales[f] * (season * signal[f] + noise));
                    }
                    for c in 0..spec.one_hot {
                        out.push(if Some(c) == category { 1.0 } else { 0.0 });
                    }
                }
            }
        }

        let manifest = self.manifest();
        let tensors = manifest
            .sensors
            .iter()
            .zip(blocks)
            .map(|(spec, data)| {
                let mut shape = vec![n];
                shape.extend(spec.block_shape());
                Tensor::new(shape, data)
            })
            .collect::<Result<Vec<_>>>()?;
        let targets = match self.task {
            Task::Classification { .. } => Targets::Classes(classes),
            Task::Regression => Targets::Values(values),
        };
        let width = n.to_string().len().max(4);
        let ids = (0..n).map(|i| format!("s{i:0width$}")).collect();
        Dataset::new(manifest, ids, tensors, targets)
    }
}

/// Generates a dataset and writes it to `dir`.
pub fn synth_generate(config: &GeneratorConfig, dir: &Path) -> Result<Dataset> {
    let data = config.generate()?;
    write_dataset(&data, dir)?;
    Ok(data)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_expected_schemas() {
        let crop = preset("cropharvest-like", 5, 0).unwrap().manifest();
        let dims: Vec<usize> = crop.sensors.iter().map(|s| s.dim).collect();
        assert_eq!(dims, vec![11, 2, 2, 2]);
        assert_eq!(crop.total_dim(), 17);
        assert_eq!(crop.temporal_indices(), vec![0, 1, 2]);

        let lfmc = preset("lfmc-like", 5, 0).unwrap().manifest();
        assert_eq!(lfmc.sensors.iter().map(|s| s.dim).collect::<Vec<_>>(), vec![8, 3, 7]);
        assert_eq!(lfmc.sensors[2].passthrough, vec![2, 3, 4, 5, 6]);

        let pm = preset("pm25-like", 5, 0).unwrap().manifest();
        assert_eq!(pm.sensors.iter().map(|s| s.dim).collect::<Vec<_>>(), vec![3, 4, 2]);
        assert!(preset("nope", 1, 0).is_err());
    }

    #[test]
    fn one_hot_columns_are_valid() {
        let data = preset("lfmc-like", 50, 3).unwrap().generate().unwrap();
        for i in 0..data.len() {
            let row = data.blocks[2].row(i);
            let tail = &row[2..];
            assert_eq!(tail.iter().sum::<f64>(), 1.0);
            assert!(tail.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = preset("synthetic-3", 30, 11).unwrap().generate().unwrap();
        let b = preset("synthetic-3", 30, 11).unwrap().generate().unwrap();
        let c = preset("synthetic-3", 30, 12).unwrap().generate().unwrap();
        assert_eq!(a, b);
        assert_ne!(a.blocks[0], c.blocks[0]);
    }

    #[test]
    fn zero_samples_is_valid() {
        let data = preset("synthetic-3", 0, 1).unwrap().generate().unwrap();
        assert!(data.is_empty());
    }
}
