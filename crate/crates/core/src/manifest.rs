//! Run manifest: the resolved configuration, a dataset content
//! fingerprint, and the paths of emitted artifacts. Re-running with an
//! identical manifest reproduces identical artifacts.

use crate::config::{hex_string, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub config_hash: String,
    pub dataset_fingerprint: String,
    pub seed: u64,
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(config: TrainConfig, dataset_fingerprint: String) -> Self {
        let config_hash = config.hash();
        let seed = config.seed;
        Self {
            config,
            config_hash,
            dataset_fingerprint,
            seed,
            artifacts: BTreeMap::new(),
        }
    }

    pub fn add_artifact(&mut self, kind: &str, path: &Path) {
        self.artifacts
            .insert(kind.to_string(), path.display().to_string());
    }

    /// Digest over config hash + dataset fingerprint; identifies runs.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.config_hash.as_bytes());
        h.update(self.dataset_fingerprint.as_bytes());
        hex_string(&h.finalize())
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("serializable"))
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

/// Content hash of a dataset directory: file names and bytes, in sorted
/// name order.
pub fn fingerprint_dataset(dir: &Path) -> io::Result<String> {
    let mut names: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    let mut h = Sha256::new();
    for name in &names {
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update(std::fs::read(dir.join(name))?);
        h.update([0xffu8]);
    }
    Ok(hex_string(&h.finalize()))
}
