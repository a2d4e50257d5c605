//! JSON checkpoints of trained models.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetManifest, NormalizationStats};
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::robustness::Gallery;

pub const CHECKPOINT_FORMAT: &str = "msr-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Hex SHA-256 of the model's manifest in canonical JSON.
    pub manifest_sha256: String,
    pub model: ModelBundle,
    #[serde(default)]
    pub normalization: Option<NormalizationStats>,
    #[serde(default)]
    pub gallery: Option<Gallery>,
}

pub fn manifest_hash(manifest: &DatasetManifest) -> String {
    let bytes = serde_json::to_vec(manifest).expect("manifest serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn new(model: ModelBundle, normalization: Option<NormalizationStats>, gallery: Option<Gallery>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            manifest_sha256: manifest_hash(&model.manifest),
            model,
            normalization,
            gallery,
        }
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string(checkpoint).map_err(|e| Error::parse(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint and verifies its format, version and manifest hash.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cp: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    if cp.format != CHECKPOINT_FORMAT || cp.version != CHECKPOINT_VERSION {
        return Err(Error::parse(
            path,
            format!("unsupported checkpoint {} v{}", cp.format, cp.version),
        ));
    }
    if manifest_hash(&cp.model.manifest) != cp.manifest_sha256 {
        return Err(Error::Consistency("checkpoint manifest hash mismatch".into()));
    }
    for member in &mut cp.model.members {
        member.params.reindex()?;
    }
    Ok(cp)
}
