//! Attention-based report generation: a convolutional region encoder and
//! LSTM decoders conditioned on attended region features.

mod decoder;
mod registry;

use std::path::{Path, PathBuf};

use image::GrayImage;
use ndarray::{Array2, Axis, Ix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::classifier::{load_backbone, BackboneSpec, BACKBONE};
use crate::error::{Error, Result};
use crate::imaging::{self, Normalization};
use crate::nn::{Graph, ParamStore, Tensor};

pub use decoder::{
    train_decoder, AttentionStep, Decoder, DecoderConfig, DecoderEpoch, DecoderState, Decoding, TrainedDecoder,
};
pub use registry::{
    plan_routes, select_decoder, DecoderChoice, DecoderRegistry, DecoderRole, RegistryManifest, Selection,
    MIN_DEDICATED_SAMPLES,
};

pub const ENCODER_KIND: &str = "encoder";

/// `D × R` region feature matrix; column `k` describes spatial region `k`
/// (row-major over the pooled `S × S` grid).
#[derive(Clone, Debug, PartialEq)]
pub struct RegionFeatures(pub Array2<f64>);

impl RegionFeatures {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn regions(&self) -> usize {
        self.0.ncols()
    }

    /// `R × D` view used by the decoder.
    pub fn regions_by_dim(&self) -> Array2<f64> {
        self.0.t().to_owned()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub backbone: BackboneSpec,
    pub input_size: u32,
    pub normalization: Normalization,
    /// Side `S` of the adaptive pooling grid; `R = S²`.
    pub pooled_side: usize,
    /// Classifier checkpoint whose backbone weights the encoder reuses.
    pub pretrained: Option<PathBuf>,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            backbone: BackboneSpec::ResNet101,
            input_size: 224,
            normalization: Normalization::imagenet(),
            pooled_side: 14,
            pretrained: None,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// `D = 32`, `S = 4` over 32 px grayscale inputs.
    pub fn tiny() -> Self {
        EncoderConfig {
            backbone: BackboneSpec::tiny_valid(&[16, 32]),
            input_size: 32,
            normalization: Normalization::identity(1),
            pooled_side: 4,
            ..EncoderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.normalization.validate()?;
        if self.input_size == 0 || self.pooled_side == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Frozen convolutional encoder producing region features.
#[derive(Clone, Debug)]
pub struct ImageEncoder {
    config: EncoderConfig,
    params: ParamStore,
}

impl ImageEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        config
            .backbone
            .init(BACKBONE, config.normalization.channels(), &mut params, &mut rng);
        if let Some(path) = &config.pretrained {
            load_backbone(&mut params, path)?;
        }
        Ok(ImageEncoder { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Feature dimension `D`.
    pub fn dim(&self) -> usize {
        self.config.backbone.out_channels()
    }

    pub fn regions(&self) -> usize {
        self.config.pooled_side * self.config.pooled_side
    }

    pub fn preprocess(&self, img: &GrayImage) -> Tensor {
        imaging::to_tensor(img, self.config.input_size, &self.config.normalization)
    }

    pub fn encode(&self, x: &Tensor) -> Result<RegionFeatures> {
        let s = self.config.input_size as usize;
        let c = self.config.normalization.channels();
        if x.shape() != [1, c, s, s] {
            return Err(Error::ShapeMismatch {
                expected: format!("1×{c}×{s}×{s}"),
                actual: format!("{:?}", x.shape()),
            });
        }
        let mut g = Graph::inference();
        let input = g.input(x.clone());
        let maps = self.config.backbone.forward(&mut g, &self.params, BACKBONE, input);
        let side = self.config.pooled_side;
        let pooled = g.adaptive_avg_pool(maps, side, side);
        let f = g
            .value(pooled)
            .clone()
            .into_dimensionality::<Ix4>()
            .map_err(|e| Error::Internal(e.to_string()))?
            .index_axis_move(Axis(0), 0);
        let d = f.shape()[0];
        let f = f
            .into_shape_with_order((d, side * side))
            .map_err(|e| Error::Internal(e.to_string()))?;
        Ok(RegionFeatures(f))
    }

    pub fn encode_image(&self, img: &GrayImage) -> Result<RegionFeatures> {
        self.encode(&self.preprocess(img))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::new(ENCODER_KIND, self.config.clone(), vec![], &self.params).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::<EncoderConfig>::load(path, ENCODER_KIND)?;
        let mut enc = ImageEncoder::new(EncoderConfig {
            pretrained: None,
            ..ckpt.config.clone()
        })?;
        enc.params.load_from(&ckpt.param_store()?)?;
        enc.config = ckpt.config;
        Ok(enc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    #[test]
    fn tiny_encoder_shape() {
        let enc = ImageEncoder::new(EncoderConfig::tiny()).unwrap();
        let f = enc.encode(&ArrayD::from_elem(IxDyn(&[1, 1, 32, 32]), 0.2)).unwrap();
        assert_eq!((f.dim(), f.regions()), (32, 16));
        assert!(enc.encode(&ArrayD::zeros(IxDyn(&[1, 1, 31, 32]))).is_err());
    }

    #[test]
    fn constant_image_gives_equal_columns() {
        let enc = ImageEncoder::new(EncoderConfig::tiny()).unwrap();
        let f = enc.encode(&ArrayD::from_elem(IxDyn(&[1, 1, 32, 32]), 0.7)).unwrap();
        let first = f.0.column(0).to_owned();
        assert!(first.iter().any(|&v| v != 0.0));
        for col in f.0.columns() {
            for (a, b) in col.iter().zip(&first) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn default_encoder_gives_2048_by_196() {
        let enc = ImageEncoder::new(EncoderConfig::default()).unwrap();
        let f = enc.encode(&ArrayD::zeros(IxDyn(&[1, 3, 224, 224]))).unwrap();
        assert_eq!((f.dim(), f.regions()), (2048, 196));
    }

    #[test]
    fn encoder_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let enc = ImageEncoder::new(EncoderConfig { seed: 3, ..EncoderConfig::tiny() }).unwrap();
        let path = dir.path().join("enc.json");
        enc.save(&path).unwrap();
        let back = ImageEncoder::load(&path).unwrap();
        assert_eq!(back.params().digest(), enc.params().digest());
    }
}
