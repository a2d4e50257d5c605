//! Cross-validated robustness experiments with simulated missing sensors.

mod report;
mod sweep;

pub use report::{
    aggregate, read_results, write_report, Aggregate, FullSensorScore, RobustnessReport, Summary, RESULTS_HEADER,
    SCHEMA_VERSION,
};
pub use sweep::{esensi_config_grid, sweep_dropout_ratio, write_table, AblationRow, AblationTable};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    kfold_split, load_dataset, preset, zscore_fit_apply, Dataset, DatasetManifest, FoldSplit, NormalizationStats,
    SensorKind,
};
use crate::error::{Error, Result};
use crate::metrics::{prs_from_rmse, PredictionSet, ScoreKind};
use crate::models::{
    build_model, train_on_indices, EncoderConfig, EsensiOptions, FusionStrategy, ModelBundle, PredictContext,
    TrainConfig,
};
use crate::robustness::{
    ExemplarOptions, Gallery, MaskVector, MissingPolicy, SensorDropoutConfig, TemporalDropoutConfig, MASK_VALUE,
};

/// Registered method names, in report order.
pub const METHODS: [&str; 7] = [
    "input",
    "itempd",
    "feature",
    "ensemble",
    "isensd",
    "isensd-nr",
    "esensi",
];

pub fn is_registered(method: &str) -> bool {
    METHODS.contains(&method)
}

/// Resolved training and inference settings of one method.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    pub strategy: FusionStrategy,
    pub policy: MissingPolicy,
    pub sensor_dropout: Option<SensorDropoutConfig>,
    pub temporal_dropout: Option<TemporalDropoutConfig>,
    pub esensi: Option<EsensiOptions>,
}

/// Builds the method `name` under `config` for datasets with `manifest`.
pub fn method_spec(name: &str, config: &ExperimentConfig, manifest: &DatasetManifest) -> Result<MethodSpec> {
    let td_value = MissingPolicy::TdValueImpute { value: MASK_VALUE };
    let (strategy, policy, sd, td, esensi) = match name {
        "input" => (FusionStrategy::Input, MissingPolicy::MeanImpute, None, None, None),
        "itempd" => (
            FusionStrategy::Input,
            td_value,
            None,
            Some(TemporalDropoutConfig::new(config.td_ratio)?),
            None,
        ),
        "feature" => (FusionStrategy::Feature, MissingPolicy::MeanImpute, None, None, None),
        "ensemble" => (FusionStrategy::Ensemble, MissingPolicy::Ignore, None, None, None),
        "isensd" => (
            FusionStrategy::Input,
            td_value,
            Some(SensorDropoutConfig::ratio(config.sd_ratio, manifest)?),
            None,
            None,
        ),
        "isensd-nr" => (
            FusionStrategy::Input,
            td_value,
            Some(SensorDropoutConfig::combinations(manifest)),
            None,
            None,
        ),
        "esensi" => (
            FusionStrategy::Esensi,
            MissingPolicy::Ignore,
            None,
            None,
            Some(config.esensi),
        ),
        other => return Err(Error::Config(format!("unknown method `{other}`"))),
    };
    let policy = config.policies.get(name).cloned().unwrap_or(policy);
    match &policy {
        MissingPolicy::Ignore if !strategy.averages_sensors() => {
            return Err(Error::Config(format!("method `{name}` cannot ignore missing sensors")))
        }
        MissingPolicy::Exemplar(_) if strategy == FusionStrategy::Input => {
            return Err(Error::Config(format!(
                "method `{name}` has no per-sensor embeddings for exemplar lookup"
            )))
        }
        _ => {}
    }
    Ok(MethodSpec {
        name: name.to_string(),
        strategy,
        policy,
        sensor_dropout: sd,
        temporal_dropout: td,
        esensi,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// A dataset directory written by `write_dataset`.
    Files {
        manifest: PathBuf,
        #[serde(default)]
        data_dir: Option<PathBuf>,
    },
    /// A synthetic preset generated in memory.
    Preset {
        preset: String,
        n_samples: usize,
        seed: u64,
    },
}

fn default_k() -> usize {
    10
}

fn default_percents() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

fn default_sd_ratio() -> f64 {
    0.2
}

fn default_td_ratio() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub methods: Vec<String>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    /// Only these folds are run (all when absent).
    #[serde(default)]
    pub folds: Option<Vec<usize>>,
    /// Missingness levels `p` as fractions of the validation fold.
    #[serde(default = "default_percents")]
    pub percents: Vec<f64>,
    /// Sensor subsets removed together; each temporal sensor alone when absent.
    #[serde(default)]
    pub scenarios: Option<Vec<Vec<String>>>,
    #[serde(default = "default_sd_ratio")]
    pub sd_ratio: f64,
    #[serde(default = "default_td_ratio")]
    pub td_ratio: f64,
    #[serde(default)]
    pub esensi: EsensiOptions,
    /// Per-method replacement of the default missing-sensor policy.
    #[serde(default)]
    pub policies: BTreeMap<String, MissingPolicy>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    /// Record wall-clock seconds; off keeps reports byte-reproducible.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSource, methods: Vec<String>) -> Self {
        Self {
            dataset,
            methods,
            k: default_k(),
            seed: 0,
            folds: None,
            percents: default_percents(),
            scenarios: None,
            sd_ratio: default_sd_ratio(),
            td_ratio: default_td_ratio(),
            esensi: EsensiOptions::default(),
            policies: BTreeMap::new(),
            train: TrainConfig::default(),
            encoder: EncoderConfig::default(),
            timing: false,
            out_dir: None,
        }
    }

    /// Reads a config file; relative dataset paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let DatasetSource::Files { manifest, data_dir } = &mut self.dataset {
            if manifest.is_relative() {
                *manifest = base.join(&*manifest);
            }
            if let Some(d) = data_dir {
                if d.is_relative() {
                    *d = base.join(&*d);
                }
            }
        }
    }

    /// Checks everything that does not need the dataset.
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods configured".into()));
        }
        if let Some(bad) = self.methods.iter().find(|m| !is_registered(m)) {
            return Err(Error::Config(format!("unknown method `{bad}`")));
        }
        if let Some(bad) = self.policies.keys().find(|m| !is_registered(m)) {
            return Err(Error::Config(format!("policy given for unknown method `{bad}`")));
        }
        if self.k < 2 {
            return Err(Error::Config(format!("k = {} must be >= 2", self.k)));
        }
        if let Some(folds) = &self.folds {
            if folds.is_empty() || folds.iter().any(|&f| f >= self.k) {
                return Err(Error::Config(format!("folds {folds:?} must be non-empty and < k")));
            }
        }
        if self.percents.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!("percents {:?} must lie in [0,1]", self.percents)));
        }
        if !(0.0..=1.0).contains(&self.sd_ratio) || !(0.0..1.0).contains(&self.td_ratio) {
            return Err(Error::Config("sd_ratio must be in [0,1] and td_ratio in [0,1)".into()));
        }
        Ok(())
    }

    /// Loads or generates the configured dataset.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSource::Files { manifest, data_dir } => {
                let dir = data_dir
                    .clone()
                    .unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default());
                load_dataset(manifest, &dir)
            }
            DatasetSource::Preset {
                preset: name,
                n_samples,
                seed,
            } => preset(name, *n_samples, *seed)?.generate(),
        }
    }

    fn fold_list(&self) -> Vec<usize> {
        self.folds.clone().unwrap_or_else(|| (0..self.k).collect())
    }
}

/// Which sensors to withhold from how many validation samples.
#[derive(Clone, Debug, PartialEq)]
pub struct MissingnessScenario {
    pub sensors: Vec<usize>,
    /// Affected fraction `p` of the validation fold.
    pub percent: f64,
    pub seed: u64,
}

impl MissingnessScenario {
    pub fn validate(&self, manifest: &DatasetManifest) -> Result<()> {
        if !(0.0..=1.0).contains(&self.percent) {
            return Err(Error::Parameter(format!(
                "missingness level {} not in [0,1]",
                self.percent
            )));
        }
        if self.sensors.is_empty() {
            return Err(Error::Parameter("scenario removes no sensor".into()));
        }
        for &s in &self.sensors {
            let spec = manifest
                .sensors
                .get(s)
                .ok_or_else(|| Error::UnknownSensor(format!("#{s}")))?;
            if spec.kind == SensorKind::Static {
                return Err(Error::Parameter(format!(
                    "static sensor `{}` cannot go missing",
                    spec.name
                )));
            }
        }
        Ok(())
    }
}

/// Availability of `n` validation samples: exactly `round(p·n)` samples,
/// drawn without replacement, lose the scenario's sensors.
pub fn simulate_missingness<R: Rng + ?Sized>(
    manifest: &DatasetManifest,
    n: usize,
    scenario: &MissingnessScenario,
    rng: &mut R,
) -> Result<Vec<MaskVector>> {
    scenario.validate(manifest)?;
    let n_sensors = manifest.sensors.len();
    let mut masks = vec![MaskVector::all_available(n_sensors); n];
    let affected = (scenario.percent * n as f64).round() as usize;
    for i in index::sample(rng, n, affected.min(n)) {
        masks[i] = MaskVector::with_missing(n_sensors, &scenario.sensors);
    }
    Ok(masks)
}

/// Scenario sensor subsets as `(label, indices)`.
pub fn scenario_sensors(config: &ExperimentConfig, manifest: &DatasetManifest) -> Result<Vec<(String, Vec<usize>)>> {
    match &config.scenarios {
        None => Ok(manifest
            .temporal_indices()
            .into_iter()
            .map(|s| (manifest.sensors[s].name.clone(), vec![s]))
            .collect()),
        Some(list) => list
            .iter()
            .map(|names| {
                let idx = names
                    .iter()
                    .map(|n| manifest.sensor_index(n))
                    .collect::<Result<Vec<_>>>()?;
                Ok((names.join("+"), idx))
            })
            .collect(),
    }
}

/// SplitMix64 finalizer over a sequence of words.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15_u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// One evaluation of one trained model on one validation fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: String,
    pub fold: usize,
    /// Scenario label (sensor names joined by `+`).
    pub sensor: String,
    /// Missingness level in percent of the validation fold.
    pub percent: f64,
    pub score_kind: ScoreKind,
    pub score: f64,
    pub rmse_miss: f64,
    pub rmse_full: f64,
    pub prs: f64,
    pub seconds: f64,
}

fn run_job(
    config: &ExperimentConfig,
    data: &Dataset,
    spec: &MethodSpec,
    fold: usize,
    split: &FoldSplit,
    scenarios: &[(String, Vec<usize>)],
) -> Result<Vec<RunResult>> {
    // the clock is only read on request; it is unavailable in some wasm hosts
    let start = config.timing.then(Instant::now);
    let train_idx = split.training(fold);
    let val_idx = split.validation(fold);
    let (_, norm) = zscore_fit_apply(data, &train_idx)?;
    let job_seed = mix_seed(&[config.seed, fold as u64]);

    let mut model = build_model(&data.manifest, spec.strategy, &config.encoder, spec.esensi, job_seed)?;
    let mut train_cfg = config.train.clone();
    train_cfg.seed = job_seed;
    train_cfg.sensor_dropout = spec.sensor_dropout.clone();
    train_cfg.temporal_dropout = spec.temporal_dropout;
    train_on_indices(&mut model, &norm, &train_idx, &train_cfg)?;

    let gallery = match &spec.policy {
        MissingPolicy::Exemplar(opts) => Some(build_gallery(&model, &norm, &train_idx, opts)?),
        _ => None,
    };
    // validation blocks are already z-scored with the training statistics
    let normalized = NormalizationStats::normalized_space(&data.manifest);
    let ctx = PredictContext {
        policy: &spec.policy,
        stats: Some(&normalized),
        gallery: gallery.as_ref(),
    };

    let blocks: Vec<_> = norm.blocks.iter().map(|b| b.select_rows(val_idx)).collect();
    let targets = norm.targets.select(val_idx);
    let task = data.manifest.task;
    let n_sensors = data.manifest.sensors.len();
    let full_masks = vec![MaskVector::all_available(n_sensors); val_idx.len()];
    let full = PredictionSet::new(targets.clone(), model.predict_batch(&blocks, &full_masks, &ctx)?, task)?;
    let full_score = full.score()?;
    let rmse_full = full.rmse()?;

    let mut rows = Vec::new();
    for (si, (label, sensors)) in scenarios.iter().enumerate() {
        for &p in &config.percents {
            let (score, rmse_miss, prs) = if p == 0.0 {
                (full_score.value, rmse_full, 1.0)
            } else {
                let scenario = MissingnessScenario {
                    sensors: sensors.clone(),
                    percent: p,
                    seed: mix_seed(&[config.seed, fold as u64, si as u64, p.to_bits()]),
                };
                let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
                let masks = simulate_missingness(&data.manifest, val_idx.len(), &scenario, &mut rng)?;
                let miss = PredictionSet::new(targets.clone(), model.predict_batch(&blocks, &masks, &ctx)?, task)?;
                let rmse_miss = miss.rmse()?;
                (miss.score()?.value, rmse_miss, prs_from_rmse(rmse_miss, rmse_full)?)
            };
            rows.push(RunResult {
                method: spec.name.clone(),
                fold,
                sensor: label.clone(),
                percent: p * 100.0,
                score_kind: full_score.metric,
                score,
                rmse_miss,
                rmse_full,
                prs,
                seconds: 0.0,
            });
        }
    }
    if let Some(start) = start {
        let secs = start.elapsed().as_secs_f64();
        for r in &mut rows {
            r.seconds = secs;
        }
    }
    Ok(rows)
}

fn build_gallery(model: &ModelBundle, data: &Dataset, train_idx: &[usize], opts: &ExemplarOptions) -> Result<Gallery> {
    let blocks: Vec<_> = data.blocks.iter().map(|b| b.select_rows(train_idx)).collect();
    let embeddings = model.embed(&blocks)?;
    let ids = train_idx.iter().map(|&i| data.ids[i].clone()).collect();
    Gallery::build(embeddings, ids, *opts)
}

/// Runs every configured method on every configured fold and evaluates each
/// trained model under all scenarios. A failing job stops the report at the
/// results gathered before it and marks it incomplete.
pub fn run_cv_experiment(config: &ExperimentConfig, data: &Dataset) -> Result<RobustnessReport> {
    config.validate()?;
    let specs = config
        .methods
        .iter()
        .map(|m| method_spec(m, config, &data.manifest))
        .collect::<Result<Vec<_>>>()?;
    let scenarios = scenario_sensors(config, &data.manifest)?;
    for (_, sensors) in &scenarios {
        MissingnessScenario {
            sensors: sensors.clone(),
            percent: 0.0,
            seed: 0,
        }
        .validate(&data.manifest)?;
    }
    let split = kfold_split(data.len(), config.k, config.seed)?;
    let folds = config.fold_list();
    let jobs: Vec<(&MethodSpec, usize)> = specs.iter().flat_map(|s| folds.iter().map(move |&f| (s, f))).collect();
    let outcomes: Vec<Result<Vec<RunResult>>> = jobs
        .par_iter()
        .map(|(spec, fold)| run_job(config, data, spec, *fold, &split, &scenarios))
        .collect();

    let mut results = Vec::new();
    let mut error = None;
    for ((spec, fold), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(rows) => results.extend(rows),
            Err(e) => {
                log::error!("method {} fold {fold} failed: {e}", spec.name);
                error = Some(format!("method {} fold {fold}: {e}", spec.name));
                break;
            }
        }
    }
    Ok(RobustnessReport::new(results, error))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SensorSpec, Task};

    fn manifest() -> DatasetManifest {
        DatasetManifest {
            name: "m".into(),
            task: Task::Regression,
            sensors: vec![
                SensorSpec::temporal("a", 2, 4),
                SensorSpec::static_("s", 1),
                SensorSpec::temporal("b", 1, 4),
            ],
            n_samples: 0,
        }
    }

    #[test]
    fn affected_counts_are_exact() {
        let m = manifest();
        for (p, n, expected) in [
            (0.0, 100, 0),
            (1.0, 100, 100),
            (0.5, 100, 50),
            (0.25, 10, 3),
            (0.75, 7, 5),
        ] {
            let sc = MissingnessScenario {
                sensors: vec![0],
                percent: p,
                seed: 1,
            };
            let masks = simulate_missingness(&m, n, &sc, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            assert_eq!(masks.iter().filter(|k| !k.is_full()).count(), expected, "p={p} n={n}");
            assert!(masks.iter().all(|k| k.is_available(1) && k.is_available(2)));
        }
    }

    #[test]
    fn static_and_unknown_sensors_rejected() {
        let m = manifest();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for sensors in [vec![1], vec![7]] {
            let sc = MissingnessScenario {
                sensors,
                percent: 0.5,
                seed: 0,
            };
            assert!(simulate_missingness(&m, 10, &sc, &mut rng).is_err());
        }
    }

    #[test]
    fn method_registry_covers_all_names() {
        let cfg = ExperimentConfig::new(
            DatasetSource::Preset {
                preset: "synthetic-3".into(),
                n_samples: 10,
                seed: 0,
            },
            METHODS.iter().map(|s| s.to_string()).collect(),
        );
        cfg.validate().unwrap();
        let m = manifest();
        for name in METHODS {
            assert_eq!(method_spec(name, &cfg, &m).unwrap().name, name);
        }
        assert!(method_spec("bogus", &cfg, &m).is_err());
    }

    #[test]
    fn ignore_policy_rejected_for_input() {
        let mut cfg = ExperimentConfig::new(
            DatasetSource::Preset {
                preset: "synthetic-3".into(),
                n_samples: 10,
                seed: 0,
            },
            vec!["input".into()],
        );
        cfg.policies.insert("input".into(), MissingPolicy::Ignore);
        assert!(method_spec("input", &cfg, &manifest()).is_err());
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let r: std::result::Result<ExperimentConfig, _> = serde_json::from_str(
            r#"{"dataset":{"source":"preset","preset":"synthetic-3","n_samples":10,"seed":0},"methods":["input"],"bogus":1}"#,
        );
        assert!(r.is_err());
    }
}
