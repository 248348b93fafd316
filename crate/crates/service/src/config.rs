use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use cxr::pipeline::PipelineConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Directory holding `classifier.json` and `decoders/`.
    pub models: PathBuf,
    /// SQLite file; created on first start.
    pub storage: PathBuf,
    pub max_upload_bytes: usize,
    /// Interpret uploads in the background and answer 202 straight away.
    pub queue: bool,
    /// `pipeline.threshold` is the default τ for interpretation reads.
    pub pipeline: PipelineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            models: "models".into(),
            storage: "cxr.sqlite".into(),
            max_upload_bytes: 10 << 20,
            queue: false,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> cxr::Result<()> {
        if self.max_upload_bytes == 0 {
            return Err(cxr::Error::Config("max_upload_bytes must be positive".into()));
        }
        self.pipeline.validate()
    }
}
