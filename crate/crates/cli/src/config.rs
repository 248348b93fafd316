//! The resolved run configuration. Sources, lowest first: preset defaults,
//! the TOML file, `CXR_*` environment variables, command-line flags. clap
//! resolves the last two; each command applies them over the loaded file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use cxr::captioner::{DecoderConfig, EncoderConfig, MIN_DEDICATED_SAMPLES};
use cxr::classifier::ClassifierConfig;
use cxr::corpus::{LabelConfig, SplitSpec};
use cxr::pipeline::PipelineConfig;
use cxr::synth::SynthConfig;
use cxr_service::ServiceConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 32 px inputs and small networks; trains in seconds on a CPU.
    Tiny,
    /// DenseNet-121 at 224 px with 512-wide decoders.
    #[default]
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Prepared dataset directory (output of `prepare`).
    pub data: PathBuf,
    /// Model directory: `classifier.json` and `decoders/`.
    pub models: PathBuf,
    /// Classes with fewer training reports share one decoder.
    pub min_samples: usize,
    pub labels: LabelConfig,
    pub split: SplitSpec,
    pub classifier: ClassifierConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub pipeline: PipelineConfig,
    pub service: ServeSection,
    pub synth: SynthConfig,
}

/// Service settings that are not already top-level keys; `serve` combines
/// them with `models` and `pipeline`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub host: String,
    pub port: u16,
    pub storage: PathBuf,
    pub max_upload_bytes: usize,
    pub queue: bool,
}

impl Default for ServeSection {
    fn default() -> Self {
        let d = ServiceConfig::default();
        ServeSection {
            host: d.host,
            port: d.port,
            storage: d.storage,
            max_upload_bytes: d.max_upload_bytes,
            queue: d.queue,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Full)
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (classifier, encoder, decoder) = match preset {
            Preset::Tiny => (ClassifierConfig::tiny(), EncoderConfig::tiny(), DecoderConfig::tiny()),
            Preset::Full => Default::default(),
        };
        RunConfig {
            preset,
            data: "prepared".into(),
            models: "models".into(),
            min_samples: MIN_DEDICATED_SAMPLES,
            labels: LabelConfig::default(),
            split: SplitSpec::default(),
            classifier,
            encoder,
            decoder,
            pipeline: PipelineConfig::default(),
            service: ServeSection::default(),
            synth: SynthConfig::default(),
        }
    }

    /// Preset defaults overlaid with `file`. `preset` wins over the file's
    /// own `preset` key.
    pub fn load(file: Option<&Path>, preset: Option<Preset>) -> anyhow::Result<Self> {
        let table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str::<toml::Table>(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => toml::Table::new(),
        };
        let preset = match (preset, table.get("preset")) {
            (Some(p), _) => p,
            (None, Some(v)) => v.clone().try_into().context("config key `preset`")?,
            (None, None) => Preset::default(),
        };
        let mut base = toml::Table::try_from(Self::preset(preset)).context("serializing defaults")?;
        merge(&mut base, table);
        base.insert("preset".into(), toml::Value::try_from(preset)?);
        let config: RunConfig = base.try_into().context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.labels.validate()?;
        self.split.validate()?;
        self.classifier.validate()?;
        self.encoder.validate()?;
        self.decoder.validate()?;
        self.pipeline.validate()?;
        self.service_config().validate()?;
        if self.min_samples == 0 {
            bail!("min_samples must be positive");
        }
        Ok(())
    }

    pub fn service_config(&self) -> ServiceConfig {
        ServiceConfig {
            host: self.service.host.clone(),
            port: self.service.port,
            models: self.models.clone(),
            storage: self.service.storage.clone(),
            max_upload_bytes: self.service.max_upload_bytes,
            queue: self.service.queue,
            pipeline: self.pipeline.clone(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Recursive table merge; values in `over` replace those in `base`.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn presets_differ_in_model_size() {
        let tiny = RunConfig::preset(Preset::Tiny);
        assert_eq!(tiny.classifier.input_size, 32);
        assert_eq!(RunConfig::default().classifier.input_size, 224);
        assert_eq!(tiny.pipeline.threshold, 0.8);
    }

    #[test]
    fn file_overrides_defaults_key_by_key() {
        let f = write(
            "preset = \"tiny\"\nmin_samples = 5\n[pipeline]\nthreshold = 0.6\n[decoder]\nmax_epochs = 3\n",
        );
        let c = RunConfig::load(Some(f.path()), None).unwrap();
        assert_eq!(c.preset, Preset::Tiny);
        assert_eq!(c.min_samples, 5);
        assert_eq!(c.pipeline.threshold, 0.6);
        assert_eq!(c.decoder.max_epochs, 3);
        // untouched keys keep the tiny preset's values
        assert_eq!(c.decoder.hidden_dim, DecoderConfig::tiny().hidden_dim);
        assert_eq!(c.pipeline.localization, PipelineConfig::default().localization);

        let full = RunConfig::load(Some(f.path()), Some(Preset::Full)).unwrap();
        assert_eq!(full.classifier.input_size, 224);
        assert_eq!(full.pipeline.threshold, 0.6);
    }

    #[test]
    fn bad_files_are_rejected() {
        for text in ["bogus = 1\n", "[pipeline]\nthreshold = 1.5\n", "min_samples = \"x\"\n", "not toml"] {
            assert!(RunConfig::load(Some(write(text).path()), None).is_err(), "{text}");
        }
        assert!(RunConfig::load(Some(Path::new("/nonexistent.toml")), None).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::preset(Preset::Tiny);
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::load(Some(write(&text).path()), None).unwrap(), c);
    }
}
