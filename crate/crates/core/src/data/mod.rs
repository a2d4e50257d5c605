//! Multi-sensor datasets: schema, in-memory layout, preprocessing and folds.

mod io;
mod synth;

pub use io::{load_dataset, write_dataset, LABELS_FILE, MANIFEST_FILE};
pub use synth::{preset, synth_generate, GeneratorConfig, SynthSensor, PRESETS};

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Temporal,
    Static,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub name: String,
    pub kind: SensorKind,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timesteps: Option<usize>,
    /// Feature indices left untouched by z-scoring (one-hot columns).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub passthrough: Vec<usize>,
}

impl SensorSpec {
    pub fn temporal(name: &str, dim: usize, timesteps: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: SensorKind::Temporal,
            dim,
            timesteps: Some(timesteps),
            passthrough: Vec::new(),
        }
    }

    pub fn static_(name: &str, dim: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: SensorKind::Static,
            dim,
            timesteps: None,
            passthrough: Vec::new(),
        }
    }

    pub fn is_temporal(&self) -> bool {
        self.kind == SensorKind::Temporal
    }

    /// Per-sample block shape: `[T, D]` or `[D]`.
    pub fn block_shape(&self) -> Vec<usize> {
        match self.kind {
            SensorKind::Temporal => vec![self.timesteps.unwrap_or(0), self.dim],
            SensorKind::Static => vec![self.dim],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || self.name.contains(['/', '\\', ','])
            || self.name == "labels"
            || self.name == "manifest"
        {
            return Err(Error::Config(format!("invalid sensor name `{}`", self.name)));
        }
        if self.dim == 0 {
            return Err(Error::Config(format!("sensor `{}` has dim 0", self.name)));
        }
        match (self.kind, self.timesteps) {
            (SensorKind::Temporal, None | Some(0)) => Err(Error::Config(format!(
                "temporal sensor `{}` needs timesteps >= 1",
                self.name
            ))),
            (SensorKind::Static, Some(_)) => Err(Error::Config(format!(
                "static sensor `{}` cannot declare timesteps",
                self.name
            ))),
            _ if self.passthrough.iter().any(|&f| f >= self.dim) => Err(Error::Config(format!(
                "sensor `{}` passthrough index out of range",
                self.name
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    Classification { classes: usize },
    Regression,
}

impl Task {
    /// Width of the prediction head.
    pub fn output_dim(&self) -> usize {
        match *self {
            Task::Classification { classes } => classes,
            Task::Regression => 1,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, Task::Classification { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub task: Task,
    pub sensors: Vec<SensorSpec>,
    pub n_samples: usize,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.sensors.is_empty() {
            return Err(Error::Config("manifest lists no sensors".into()));
        }
        if let Task::Classification { classes } = self.task {
            if classes < 2 {
                return Err(Error::Config(format!(
                    "classification needs >= 2 classes, got {classes}"
                )));
            }
        }
        let mut seen = HashSet::new();
        for s in &self.sensors {
            s.validate()?;
            if !seen.insert(s.name.as_str()) {
                return Err(Error::Config(format!("duplicate sensor name `{}`", s.name)));
            }
        }
        Ok(())
    }

    pub fn sensor_index(&self, name: &str) -> Result<usize> {
        self.sensors
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::UnknownSensor(name.to_string()))
    }

    pub fn sensor_names(&self) -> Vec<&str> {
        self.sensors.iter().map(|s| s.name.as_str()).collect()
    }

    /// Indices of temporal sensors, the only ones allowed to go missing.
    pub fn temporal_indices(&self) -> Vec<usize> {
        (0..self.sensors.len())
            .filter(|&i| self.sensors[i].is_temporal())
            .collect()
    }

    /// Shared time length of the temporal sensors.
    pub fn timesteps(&self) -> Result<usize> {
        let mut lengths = self.sensors.iter().filter_map(|s| s.timesteps);
        let first = lengths
            .next()
            .ok_or_else(|| Error::Alignment("no temporal sensor defines the time axis".into()))?;
        if let Some(other) = lengths.find(|&t| t != first) {
            return Err(Error::Alignment(format!(
                "temporal sensors disagree on length: {first} vs {other}"
            )));
        }
        Ok(first)
    }

    /// Width of the aligned input-fusion block.
    pub fn total_dim(&self) -> usize {
        self.sensors.iter().map(|s| s.dim).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(v) => v.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Target {
        match self {
            Targets::Classes(v) => Target::Class(v[i]),
            Targets::Values(v) => Target::Value(v[i]),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Classes(v) => Targets::Classes(indices.iter().map(|&i| v[i]).collect()),
            Targets::Values(v) => Targets::Values(indices.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// One sample: a feature block per sensor plus its target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub blocks: Vec<Tensor>,
    pub target: Target,
}

/// Column-major-by-sensor dataset: `blocks[s]` has shape `[N, T, D]` or `[N, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub ids: Vec<String>,
    pub blocks: Vec<Tensor>,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, ids: Vec<String>, blocks: Vec<Tensor>, targets: Targets) -> Result<Self> {
        manifest.validate()?;
        let n = ids.len();
        if blocks.len() != manifest.sensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} sensor blocks for {} sensors",
                blocks.len(),
                manifest.sensors.len()
            )));
        }
        for (spec, block) in manifest.sensors.iter().zip(&blocks) {
            let mut expected = vec![n];
            expected.extend(spec.block_shape());
            if block.shape() != expected.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "sensor `{}` block {:?}, expected {:?}",
                    spec.name,
                    block.shape(),
                    expected
                )));
            }
        }
        if targets.len() != n {
            return Err(Error::Consistency(format!("{} targets for {n} samples", targets.len())));
        }
        match (&manifest.task, &targets) {
            (Task::Classification { classes }, Targets::Classes(v)) => {
                if let Some(&bad) = v.iter().find(|&&c| c >= *classes) {
                    return Err(Error::Label {
                        label: bad,
                        classes: *classes,
                    });
                }
            }
            (Task::Regression, Targets::Values(_)) => {}
            _ => return Err(Error::Consistency("targets do not match the task".into())),
        }
        Ok(Self {
            manifest,
            ids,
            blocks,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            id: self.ids[i].clone(),
            blocks: self
                .manifest
                .sensors
                .iter()
                .zip(&self.blocks)
                .map(|(spec, b)| Tensor::new(spec.block_shape(), b.row(i).to_vec()).expect("validated shape"))
                .collect(),
            target: self.targets.get(i),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut manifest = self.manifest.clone();
        manifest.n_samples = indices.len();
        Dataset {
            manifest,
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            blocks: self.blocks.iter().map(|b| b.select_rows(indices)).collect(),
            targets: self.targets.select(indices),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-sensor, per-feature z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub sensors: Vec<FeatureStats>,
}

impl NormalizationStats {
    /// Statistics of an already-normalized space: means 0, standard deviations 1.
    pub fn normalized_space(manifest: &DatasetManifest) -> Self {
        Self {
            sensors: manifest
                .sensors
                .iter()
                .map(|s| FeatureStats {
                    mean: vec![0.0; s.dim],
                    std: vec![1.0; s.dim],
                })
                .collect(),
        }
    }

    /// Normalizes every block of `data` in place.
    pub fn apply(&self, data: &mut Dataset) {
        for ((stats, block), spec) in self.sensors.iter().zip(&mut data.blocks).zip(&data.manifest.sensors) {
            let d = spec.dim;
            for chunk in block.data_mut().chunks_mut(d) {
                for j in 0..d {
                    chunk[j] = (chunk[j] - stats.mean[j]) / stats.std[j];
                }
            }
        }
    }
}

/// Fits z-score statistics on `train` rows only and applies them to every row.
pub fn zscore_fit_apply(data: &Dataset, train: &[usize]) -> Result<(NormalizationStats, Dataset)> {
    if train.is_empty() {
        return Err(Error::EmptyTraining);
    }
    let mut sensors = Vec::with_capacity(data.blocks.len());
    for (spec, block) in data.manifest.sensors.iter().zip(&data.blocks) {
        let d = spec.dim;
        let mut sum = vec![0.0; d];
        let mut count = 0usize;
        for &i in train {
            for chunk in block.row(i).chunks(d) {
                for j in 0..d {
                    sum[j] += chunk[j];
                }
                count += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; d];
        for &i in train {
            for chunk in block.row(i).chunks(d) {
                for j in 0..d {
                    sq[j] += (chunk[j] - mean[j]).powi(2);
                }
            }
        }
        let mut stats = FeatureStats {
            mean,
            std: sq
                .iter()
                .map(|s| {
                    let sd = (s / count as f64).sqrt();
                    if sd > 0.0 {
                        sd
                    } else {
                        1.0
                    }
                })
                .collect(),
        };
        for &j in &spec.passthrough {
            stats.mean[j] = 0.0;
            stats.std[j] = 1.0;
        }
        sensors.push(stats);
    }
    let stats = NormalizationStats { sensors };
    let mut normalized = data.clone();
    stats.apply(&mut normalized);
    Ok((stats, normalized))
}

/// One-hot rows for category ids in `[0, classes)`.
pub fn one_hot_encode(ids: &[usize], classes: usize) -> Result<Tensor> {
    let mut out = Tensor::zeros(&[ids.len(), classes]);
    for (r, &id) in ids.iter().enumerate() {
        if id >= classes {
            return Err(Error::Parameter(format!("category {id} out of range for {classes}")));
        }
        out.row_mut(r)[id] = 1.0;
    }
    Ok(out)
}

/// Concatenates all sensors of one sample into a single `T×ΣD` block, copying
/// static vectors to every time step.
pub fn align_static_repeat(sample: &Sample, manifest: &DatasetManifest) -> Result<Tensor> {
    let t = manifest.timesteps()?;
    let width = manifest.total_dim();
    let mut out = vec![0.0; t * width];
    let mut offset = 0;
    for (spec, block) in manifest.sensors.iter().zip(&sample.blocks) {
        let d = spec.dim;
        for step in 0..t {
            let src = match spec.kind {
                SensorKind::Temporal => &block.data()[step * d..(step + 1) * d],
                SensorKind::Static => block.data(),
            };
            out[step * width + offset..step * width + offset + d].copy_from_slice(src);
        }
        offset += d;
    }
    Tensor::new(vec![t, width], out)
}

/// Batch form of [`align_static_repeat`] over per-sensor batch blocks
/// (`[n,T,D]` or `[n,D]`), giving `[n, T, ΣD]`.
pub fn align_batch(blocks: &[Tensor], manifest: &DatasetManifest) -> Result<Tensor> {
    let t = manifest.timesteps()?;
    let width = manifest.total_dim();
    let n = blocks.first().map_or(0, Tensor::rows);
    let mut out = vec![0.0; n * t * width];
    let mut offset = 0;
    for (spec, block) in manifest.sensors.iter().zip(blocks) {
        let d = spec.dim;
        for b in 0..n {
            let row = block.row(b);
            for step in 0..t {
                let src = match spec.kind {
                    SensorKind::Temporal => &row[step * d..(step + 1) * d],
                    SensorKind::Static => row,
                };
                let dst = (b * t + step) * width + offset;
                out[dst..dst + d].copy_from_slice(src);
            }
        }
        offset += d;
    }
    Tensor::new(vec![n, t, width], out)
}

/// k disjoint folds covering `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn validation(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// All indices outside `fold`, ascending.
    pub fn training(&self, fold: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }
}

/// Seeded shuffle followed by contiguous chunking; chunk sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::Parameter(format!("k must be >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::TooFewSamples { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        let mut fold = order[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(FoldSplit { folds })
}
