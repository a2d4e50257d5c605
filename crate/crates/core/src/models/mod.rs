//! Fusion architectures built from sensor-dedicated encoders and heads.
//!
//! * `input`: all sensors aligned into one `T×ΣD` block, one temporal encoder, one head.
//! * `feature`: one encoder per sensor, one head on the concatenated embeddings.
//! * `ensemble`: one independently trained encoder+head per sensor; predictions averaged.
//! * `esensi`: one encoder per sensor feeding a single shared head, optionally
//!   conditioned on a learnable per-sensor encoding vector and led by a layer norm.

mod checkpoint;
mod train;

pub use checkpoint::{
    load_checkpoint, manifest_hash, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use train::{train, train_on_indices, MemberLog, TrainConfig, TrainLog};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::data::{align_batch, DatasetManifest, NormalizationStats, Sample, SensorKind, Task};
use crate::error::{Error, Result};
use crate::layers::{Conv1d, Dense, LayerNorm};
use crate::robustness::{exemplar_lookup, impute_batch, Gallery, MaskVector, MissingPolicy};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionStrategy {
    Input,
    Feature,
    Ensemble,
    Esensi,
}

impl FusionStrategy {
    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::Input => "input",
            FusionStrategy::Feature => "feature",
            FusionStrategy::Ensemble => "ensemble",
            FusionStrategy::Esensi => "esensi",
        }
    }

    /// Whether predictions are averages over per-sensor predictions.
    pub fn averages_sensors(self) -> bool {
        matches!(self, FusionStrategy::Ensemble | FusionStrategy::Esensi)
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(FusionStrategy::Input),
            "feature" => Ok(FusionStrategy::Feature),
            "ensemble" => Ok(FusionStrategy::Ensemble),
            "esensi" => Ok(FusionStrategy::Esensi),
            other => Err(Error::Config(format!("unknown fusion strategy `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    /// Head input is `z_s + ρ_s`.
    Addition,
    /// Head input is `z_s ∥ ρ_s` (width `2d`).
    Concatenation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsensiOptions {
    pub use_encoding: bool,
    pub use_normalization: bool,
    pub combine: Combine,
}

impl Default for EsensiOptions {
    fn default() -> Self {
        Self {
            use_encoding: true,
            use_normalization: false,
            combine: Combine::Addition,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub embedding_dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub kernel_width: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 128,
            layers: 2,
            dropout: 0.2,
            kernel_width: 3,
        }
    }
}

impl EncoderConfig {
    fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.layers == 0 || self.kernel_width == 0 {
            return Err(Error::Config(
                "embedding_dim, layers and kernel_width must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0,1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "layers", rename_all = "snake_case")]
pub enum Encoder {
    /// Stacked valid convolutions followed by a mean over time.
    Temporal(Vec<Conv1d>),
    /// Stacked dense layers.
    Static(Vec<Dense>),
}

impl Encoder {
    fn temporal<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        timesteps: usize,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut remaining = timesteps;
        let mut width = input_dim;
        let mut convs = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let k = cfg.kernel_width.min(remaining).max(1);
            convs.push(Conv1d::new(
                store,
                &format!("{prefix}.conv{l}"),
                width,
                cfg.embedding_dim,
                k,
                rng,
            )?);
            remaining = remaining + 1 - k;
            width = cfg.embedding_dim;
        }
        Ok(Encoder::Temporal(convs))
    }

    fn static_<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut width = input_dim;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            layers.push(Dense::new(
                store,
                &format!("{prefix}.dense{l}"),
                width,
                cfg.embedding_dim,
                rng,
            )?);
            width = cfg.embedding_dim;
        }
        Ok(Encoder::Static(layers))
    }

    fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        dropout: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        match self {
            Encoder::Temporal(convs) => {
                let mut h = x;
                for (i, conv) in convs.iter().enumerate() {
                    h = conv.forward(tape, store, h)?;
                    h = tape.relu(h);
                    if i + 1 < convs.len() {
                        h = tape.dropout(h, dropout, training, rng)?;
                    }
                }
                tape.mean_time(h)
            }
            Encoder::Static(layers) => {
                let mut h = x;
                for (i, dense) in layers.iter().enumerate() {
                    h = dense.forward(tape, store, h)?;
                    h = tape.relu(h);
                    if i + 1 < layers.len() {
                        h = tape.dropout(h, dropout, training, rng)?;
                    }
                }
                Ok(h)
            }
        }
    }
}

/// Prediction head: optional layer norm, hidden dense layers, output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub norm: Option<LayerNorm>,
    pub hidden: Vec<Dense>,
    pub output: Dense,
}

impl Head {
    fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        normalize: bool,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let norm = if normalize {
            Some(LayerNorm::new(store, &format!("{prefix}.norm"), input_dim)?)
        } else {
            None
        };
        let mut hidden = Vec::new();
        let mut width = input_dim;
        for l in 0..cfg.layers.saturating_sub(1) {
            hidden.push(Dense::new(
                store,
                &format!("{prefix}.dense{l}"),
                width,
                cfg.embedding_dim,
                rng,
            )?);
            width = cfg.embedding_dim;
        }
        let output = Dense::new(store, &format!("{prefix}.out"), width, output_dim, rng)?;
        Ok(Self { norm, hidden, output })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().unwrap_or(&self.output).input_dim
    }

    fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        dropout: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let mut h = x;
        if let Some(norm) = &self.norm {
            h = norm.forward(tape, store, h)?;
        }
        for dense in &self.hidden {
            h = dense.forward(tape, store, h)?;
            h = tape.relu(h);
            h = tape.dropout(h, dropout, training, rng)?;
        }
        self.output.forward(tape, store, h)
    }
}

/// An independently optimized parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub params: ParamStore,
    /// Sensors consumed by this member, in manifest order.
    pub sensors: Vec<usize>,
    pub encoders: Vec<Encoder>,
    pub head: Head,
    /// Sensor encoding vectors, parallel to `sensors` (ESensI only).
    pub encodings: Vec<ParamId>,
}

/// Affine map between model space and target space for regression.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub strategy: FusionStrategy,
    pub manifest: DatasetManifest,
    pub encoder: EncoderConfig,
    pub esensi: Option<EsensiOptions>,
    pub members: Vec<Member>,
    /// Regression targets are standardized with this scale during training.
    pub target_scale: Option<TargetScale>,
}

/// Inference-time resources for the active missing-sensor policy.
#[derive(Clone, Copy, Debug)]
pub struct PredictContext<'a> {
    pub policy: &'a MissingPolicy,
    pub stats: Option<&'a NormalizationStats>,
    pub gallery: Option<&'a Gallery>,
}

impl<'a> PredictContext<'a> {
    pub fn new(policy: &'a MissingPolicy) -> Self {
        Self {
            policy,
            stats: None,
            gallery: None,
        }
    }
}

/// Builds a freshly initialized model.
pub fn build_model(
    manifest: &DatasetManifest,
    strategy: FusionStrategy,
    encoder: &EncoderConfig,
    esensi: Option<EsensiOptions>,
    seed: u64,
) -> Result<ModelBundle> {
    manifest.validate()?;
    encoder.validate()?;
    if esensi.is_some() && strategy != FusionStrategy::Esensi {
        return Err(Error::Config(format!("esensi options given for strategy `{strategy}`")));
    }
    let esensi = match strategy {
        FusionStrategy::Esensi => Some(esensi.unwrap_or_default()),
        _ => None,
    };
    if let Some(opts) = esensi {
        if opts.combine == Combine::Concatenation && !opts.use_encoding {
            return Err(Error::Config("concatenation requires the sensor encoding".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = encoder.embedding_dim;
    let out = manifest.task.output_dim();
    let all: Vec<usize> = (0..manifest.sensors.len()).collect();

    let sensor_encoder = |store: &mut ParamStore, s: usize, rng: &mut ChaCha8Rng| -> Result<Encoder> {
        let spec = &manifest.sensors[s];
        let prefix = format!("enc.{}", spec.name);
        match spec.kind {
            SensorKind::Temporal => {
                Encoder::temporal(store, &prefix, spec.dim, spec.timesteps.unwrap_or(1), encoder, rng)
            }
            SensorKind::Static => Encoder::static_(store, &prefix, spec.dim, encoder, rng),
        }
    };

    let members = match strategy {
        FusionStrategy::Input => {
            let t = manifest.timesteps()?;
            let mut params = ParamStore::new();
            let enc = Encoder::temporal(&mut params, "enc.input", manifest.total_dim(), t, encoder, &mut rng)?;
            let head = Head::new(&mut params, "head", d, out, false, encoder, &mut rng)?;
            vec![Member {
                params,
                sensors: all,
                encoders: vec![enc],
                head,
                encodings: vec![],
            }]
        }
        FusionStrategy::Feature => {
            let mut params = ParamStore::new();
            let encoders = all
                .iter()
                .map(|&s| sensor_encoder(&mut params, s, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let head = Head::new(&mut params, "head", d * all.len(), out, false, encoder, &mut rng)?;
            vec![Member {
                params,
                sensors: all,
                encoders,
                head,
                encodings: vec![],
            }]
        }
        FusionStrategy::Ensemble => all
            .iter()
            .map(|&s| {
                let mut params = ParamStore::new();
                let enc = sensor_encoder(&mut params, s, &mut rng)?;
                let head = Head::new(
                    &mut params,
                    &format!("head.{}", manifest.sensors[s].name),
                    d,
                    out,
                    false,
                    encoder,
                    &mut rng,
                )?;
                Ok(Member {
                    params,
                    sensors: vec![s],
                    encoders: vec![enc],
                    head,
                    encodings: vec![],
                })
            })
            .collect::<Result<Vec<_>>>()?,
        FusionStrategy::Esensi => {
            let opts = esensi.expect("set above");
            let mut params = ParamStore::new();
            let encoders = all
                .iter()
                .map(|&s| sensor_encoder(&mut params, s, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let mut encodings = Vec::new();
            if opts.use_encoding {
                let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
                for &s in &all {
                    let rho = Tensor::vector((0..d).map(|_| normal.sample(&mut rng)).collect());
                    encodings.push(params.insert(format!("rho.{}", manifest.sensors[s].name), rho)?);
                }
            }
            let head_in = match opts.combine {
                Combine::Addition => d,
                Combine::Concatenation => 2 * d,
            };
            let head = Head::new(
                &mut params,
                "head.shared",
                head_in,
                out,
                opts.use_normalization,
                encoder,
                &mut rng,
            )?;
            vec![Member {
                params,
                sensors: all,
                encoders,
                head,
                encodings,
            }]
        }
    };

    Ok(ModelBundle {
        strategy,
        manifest: manifest.clone(),
        encoder: *encoder,
        esensi,
        members,
        target_scale: None,
    })
}

impl ModelBundle {
    pub fn num_encoders(&self) -> usize {
        self.members.iter().map(|m| m.encoders.len()).sum()
    }

    pub fn num_heads(&self) -> usize {
        self.members.len()
    }

    pub fn num_sensor_encodings(&self) -> usize {
        self.members.iter().map(|m| m.encodings.len()).sum()
    }

    pub fn num_parameters(&self) -> usize {
        self.members.iter().map(|m| m.params.size()).sum()
    }

    /// Tensors consumed by member `m`'s encoders, from full per-sensor batch blocks.
    pub fn member_inputs(&self, m: usize, blocks: &[Tensor]) -> Result<Vec<Tensor>> {
        if blocks.len() != self.manifest.sensors.len() {
            return Err(Error::Dimension(format!(
                "{} sensor blocks for {} sensors",
                blocks.len(),
                self.manifest.sensors.len()
            )));
        }
        match self.strategy {
            FusionStrategy::Input => Ok(vec![align_batch(blocks, &self.manifest)?]),
            _ => Ok(self.members[m].sensors.iter().map(|&s| blocks[s].clone()).collect()),
        }
    }

    /// Embeddings `[n×d]` of member `m`, one per encoder.
    pub fn encode_member<R: Rng>(
        &self,
        m: usize,
        tape: &mut Tape,
        inputs: &[Tensor],
        training: bool,
        rng: &mut R,
    ) -> Result<Vec<Var>> {
        let member = &self.members[m];
        member
            .encoders
            .iter()
            .zip(inputs)
            .map(|(enc, x)| {
                let xv = tape.input(x.clone());
                enc.forward(tape, &member.params, xv, self.encoder.dropout, training, rng)
            })
            .collect()
    }

    /// Head outputs (logits or standardized scalars) from member `m`'s
    /// embeddings: one output for input/feature/ensemble members, one per
    /// sensor for ESensI.
    pub fn head_member<R: Rng>(
        &self,
        m: usize,
        tape: &mut Tape,
        embeddings: &[Var],
        training: bool,
        rng: &mut R,
    ) -> Result<Vec<Var>> {
        let member = &self.members[m];
        let p = &member.params;
        let drop = self.encoder.dropout;
        match self.strategy {
            FusionStrategy::Input | FusionStrategy::Ensemble => Ok(vec![member.head.forward(
                tape,
                p,
                embeddings[0],
                drop,
                training,
                rng,
            )?]),
            FusionStrategy::Feature => {
                let z = tape.concat(embeddings)?;
                Ok(vec![member.head.forward(tape, p, z, drop, training, rng)?])
            }
            FusionStrategy::Esensi => {
                let opts = self.esensi.expect("esensi model carries options");
                embeddings
                    .iter()
                    .enumerate()
                    .map(|(i, &z)| {
                        let input = if opts.use_encoding {
                            let rho = tape.param(p, member.encodings[i]);
                            match opts.combine {
                                Combine::Addition => {
                                    let n = tape.value(z).rows();
                                    let rows = tape.repeat_row(rho, n)?;
                                    tape.add(z, rows)?
                                }
                                Combine::Concatenation => {
                                    let n = tape.value(z).rows();
                                    let rows = tape.repeat_row(rho, n)?;
                                    tape.concat(&[z, rows])?
                                }
                            }
                        } else {
                            z
                        };
                        member.head.forward(tape, p, input, drop, training, rng)
                    })
                    .collect()
            }
        }
    }

    /// Full forward pass of member `m` on its inputs.
    pub fn forward_member<R: Rng>(
        &self,
        m: usize,
        tape: &mut Tape,
        inputs: &[Tensor],
        training: bool,
        rng: &mut R,
    ) -> Result<Vec<Var>> {
        let z = self.encode_member(m, tape, inputs, training, rng)?;
        self.head_member(m, tape, &z, training, rng)
    }

    /// Training loss of member `m`: the per-output losses summed.
    pub fn member_loss<R: Rng>(
        &self,
        m: usize,
        tape: &mut Tape,
        inputs: &[Tensor],
        targets: &ModelTargets,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let outputs = self.forward_member(m, tape, inputs, training, rng)?;
        let losses = outputs
            .into_iter()
            .map(|o| match targets {
                ModelTargets::Classes(c) => tape.softmax_cross_entropy(o, c),
                ModelTargets::Values(v) => tape.mse(o, v),
            })
            .collect::<Result<Vec<_>>>()?;
        if losses.len() == 1 {
            Ok(losses[0])
        } else {
            tape.sum_scalars(&losses)
        }
    }

    fn output_to_prediction(&self, raw: &Tensor) -> Tensor {
        match self.manifest.task {
            Task::Classification { .. } => softmax_rows(raw),
            Task::Regression => {
                let scale = self.target_scale.unwrap_or(TargetScale { mean: 0.0, std: 1.0 });
                raw.map(|v| v * scale.std + scale.mean)
            }
        }
    }

    /// Per-sensor embeddings in inference mode (strategies with sensor encoders).
    pub fn embed(&self, blocks: &[Tensor]) -> Result<Vec<Tensor>> {
        if self.strategy == FusionStrategy::Input {
            return Err(Error::Config("input fusion has no per-sensor embeddings".into()));
        }
        let mut out = vec![Tensor::zeros(&[0]); self.manifest.sensors.len()];
        let mut rng = inference_rng();
        for m in 0..self.members.len() {
            let inputs = self.member_inputs(m, blocks)?;
            let mut tape = Tape::new();
            let z = self.encode_member(m, &mut tape, &inputs, false, &mut rng)?;
            for (&s, v) in self.members[m].sensors.iter().zip(z) {
                out[s] = tape.value(v).clone();
            }
        }
        Ok(out)
    }

    /// Per-sensor predictions from per-sensor embeddings (ensemble/esensi), or
    /// the single fused prediction (feature), in inference mode.
    pub fn predict_from_embeddings(&self, embeddings: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut rng = inference_rng();
        let mut out = Vec::new();
        for m in 0..self.members.len() {
            let mut tape = Tape::new();
            let z: Vec<Var> = self.members[m]
                .sensors
                .iter()
                .map(|&s| tape.input(embeddings[s].clone()))
                .collect();
            for o in self.head_member(m, &mut tape, &z, false, &mut rng)? {
                out.push(self.output_to_prediction(tape.value(o)));
            }
        }
        Ok(out)
    }

    /// Predictions `[n×out]` per output path with all given blocks used as-is:
    /// one tensor for input/feature, one per sensor for ensemble/esensi.
    pub fn sensor_outputs(&self, blocks: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut rng = inference_rng();
        let mut out = Vec::new();
        for m in 0..self.members.len() {
            let inputs = self.member_inputs(m, blocks)?;
            let mut tape = Tape::new();
            for o in self.forward_member(m, &mut tape, &inputs, false, &mut rng)? {
                out.push(self.output_to_prediction(tape.value(o)));
            }
        }
        Ok(out)
    }

    /// Batch prediction under per-sample sensor availability.
    ///
    /// Classification rows are class probabilities; regression rows hold one
    /// value. Ensemble and ESensI average per-sensor predictions; under the
    /// ignore policy only available sensors enter the average.
    pub fn predict_batch(
        &self,
        blocks: &[Tensor],
        availability: &[MaskVector],
        ctx: &PredictContext,
    ) -> Result<Tensor> {
        let n = blocks.first().map_or(0, Tensor::rows);
        let n_sensors = self.manifest.sensors.len();
        if availability.len() != n || availability.iter().any(|m| m.len() != n_sensors) {
            return Err(Error::Dimension(
                "one availability mask of |S| flags per sample required".into(),
            ));
        }
        let out_dim = self.manifest.task.output_dim();
        if n == 0 {
            return Ok(Tensor::zeros(&[0, out_dim]));
        }
        let per_path = match ctx.policy {
            MissingPolicy::MeanImpute | MissingPolicy::TdValueImpute { .. } => {
                let mut filled = blocks.to_vec();
                impute_batch(&mut filled, availability, ctx.policy, ctx.stats)?;
                let outputs = self.sensor_outputs(&filled)?;
                return Ok(average(&outputs, None));
            }
            MissingPolicy::Ignore => {
                if !self.strategy.averages_sensors() {
                    return Err(Error::Config(format!(
                        "ignore policy requires prediction averaging, not `{}`",
                        self.strategy
                    )));
                }
                self.sensor_outputs(blocks)?
            }
            MissingPolicy::Exemplar(_) => {
                let gallery = ctx.gallery.ok_or(Error::EmptyGallery)?;
                let mut embeddings = self.embed(blocks)?;
                for (i, mask) in availability.iter().enumerate() {
                    if mask.is_full() {
                        continue;
                    }
                    let query: Vec<Vec<f64>> = embeddings.iter().map(|e| e.row(i).to_vec()).collect();
                    let found = exemplar_lookup(&query, mask, gallery)?;
                    for (s, e) in found.embeddings.into_iter().enumerate() {
                        embeddings[s].row_mut(i).copy_from_slice(&e);
                    }
                }
                let outputs = self.predict_from_embeddings(&embeddings)?;
                return Ok(average(&outputs, None));
            }
        };
        if let Some(i) = availability.iter().position(|m| m.available_count() == 0) {
            return Err(Error::NoInformation(format!("sample {i} has no available sensor")));
        }
        Ok(average(&per_path, Some(availability)))
    }

    /// Single-sample prediction.
    pub fn predict(&self, sample: &Sample, availability: &MaskVector, ctx: &PredictContext) -> Result<Vec<f64>> {
        let blocks: Vec<Tensor> = sample
            .blocks
            .iter()
            .map(|b| {
                let mut shape = vec![1];
                shape.extend_from_slice(b.shape());
                Tensor::new(shape, b.data().to_vec())
            })
            .collect::<Result<_>>()?;
        let out = self.predict_batch(&blocks, std::slice::from_ref(availability), ctx)?;
        Ok(out.row(0).to_vec())
    }
}

/// Targets in model space.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelTargets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

pub(crate) fn inference_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

pub fn softmax_rows(raw: &Tensor) -> Tensor {
    let mut out = raw.clone();
    let k = raw.row_len().max(1);
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Row-wise mean over prediction paths; with `availability`, path `s` of
/// sample `i` enters only if sensor `s` is available.
fn average(paths: &[Tensor], availability: Option<&[MaskVector]>) -> Tensor {
    if paths.len() == 1 {
        return paths[0].clone();
    }
    let mut out = Tensor::zeros(paths[0].shape());
    let n = out.rows();
    for i in 0..n {
        let used: Vec<usize> = (0..paths.len())
            .filter(|&s| availability.is_none_or(|a| a[i].is_available(s)))
            .collect();
        let row = out.row_mut(i);
        for &s in &used {
            for (o, v) in row.iter_mut().zip(paths[s].row(i)) {
                *o += v;
            }
        }
        for o in row.iter_mut() {
            *o /= used.len() as f64;
        }
    }
    out
}
