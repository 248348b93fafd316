//! Self-describing model archives: weights, configuration echo, disease
//! order and the vocabulary hash that binds classifier and decoder
//! artifacts together.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, StoredTensor};

pub const FORMAT: &str = "cxr-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint<C> {
    pub format: String,
    pub version: u32,
    /// `classifier` or `captioner`.
    pub kind: String,
    pub config: C,
    pub diseases: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_hash: Option<String>,
    /// Free-form training summary (epochs run, best metric, seed).
    #[serde(default)]
    pub meta: serde_json::Value,
    pub params: BTreeMap<String, StoredTensor>,
}

impl<C: Serialize + DeserializeOwned> Checkpoint<C> {
    pub fn new(kind: &str, config: C, diseases: Vec<String>, params: &ParamStore) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            kind: kind.to_string(),
            config,
            diseases,
            vocab_hash: None,
            meta: serde_json::Value::Null,
            params: params.to_stored(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)
                .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path, kind: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let malformed = |detail: String| Error::MalformedArtifact {
            path: path.to_path_buf(),
            detail,
        };
        let ckpt: Checkpoint<C> =
            serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
        if ckpt.format != FORMAT || ckpt.version != VERSION {
            return Err(malformed(format!(
                "unsupported format {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        if ckpt.kind != kind {
            return Err(malformed(format!("expected a {kind} checkpoint, found {}", ckpt.kind)));
        }
        Ok(ckpt)
    }

    pub fn param_store(&self) -> Result<ParamStore> {
        ParamStore::from_stored(&self.params)
    }
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// SHA-256 of a value's canonical JSON serialization.
pub fn json_digest<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
