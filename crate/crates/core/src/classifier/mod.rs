//! Multi-label disease classifier: a convolutional backbone, global average
//! pooling and an `M`-way linear head scored with per-class sigmoids.

mod backbone;
mod metrics;
mod train;

use std::path::{Path, PathBuf};

use image::GrayImage;
use ndarray::{Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::imaging::{self, Normalization};
use crate::nn::{AdamConfig, Graph, ParamStore, Tensor, Var};

pub use backbone::BackboneSpec;
pub use metrics::{auroc, auroc_per_class, mean_auroc};
pub use train::{load_labeled, train_classifier, EpochRecord, LabeledImage, TrainedClassifier};

pub const CHECKPOINT_KIND: &str = "classifier";
/// Probability clamp applied inside [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

pub(crate) const BACKBONE: &str = "backbone.";
const HEAD: &str = "head.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierOutput {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl ClassifierOutput {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probabilities = logits.iter().map(|&z| sigmoid(z)).collect();
        ClassifierOutput {
            logits,
            probabilities,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiseaseAnnotation {
    /// Indices of present diseases, ascending.
    pub present: Vec<usize>,
    pub is_normal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub backbone: BackboneSpec,
    pub input_size: u32,
    pub normalization: Normalization,
    pub threshold: f64,
    /// Train only the final layer.
    pub freeze_backbone: bool,
    /// Classifier checkpoint whose backbone weights seed initialization.
    pub pretrained: Option<PathBuf>,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            backbone: BackboneSpec::DenseNet121,
            input_size: 224,
            normalization: Normalization::imagenet(),
            threshold: 0.8,
            freeze_backbone: false,
            pretrained: None,
            optimizer: AdamConfig::default(),
            batch_size: 16,
            max_epochs: 100,
            patience: 20,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    /// Small from-scratch configuration for 32 px grayscale inputs. Pixels
    /// are centred on the dark synthetic background; without that the
    /// ReLU features tend to die within a few epochs.
    pub fn tiny() -> Self {
        ClassifierConfig {
            backbone: BackboneSpec::tiny(&[16, 32]),
            input_size: 32,
            normalization: Normalization {
                mean: vec![0.25],
                std: vec![0.25],
            },
            optimizer: AdamConfig {
                learning_rate: 1e-2,
                ..AdamConfig::default()
            },
            max_epochs: 200,
            ..ClassifierConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_threshold(self.threshold)?;
        self.backbone.validate()?;
        self.normalization.validate()?;
        if self.input_size == 0 {
            return Err(Error::Config("input_size must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

fn check_threshold(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("threshold must lie in (0, 1), got {tau}")))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `−Σ_m [y_m ln g_m + (1−y_m) ln(1−g_m)]` with `g` clamped to
/// `[ε, 1−ε]`.
pub fn bce_loss(output: &ClassifierOutput, labels: &[u8]) -> Result<f64> {
    if labels.len() != output.probabilities.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} labels", output.probabilities.len()),
            actual: labels.len().to_string(),
        });
    }
    Ok(output
        .probabilities
        .iter()
        .zip(labels)
        .map(|(&g, &y)| {
            let g = g.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if y == 1 {
                -g.ln()
            } else {
                -(1.0 - g).ln()
            }
        })
        .sum())
}

/// Diseases with `g_m > τ` (strict); normal when none qualifies.
pub fn annotate(output: &ClassifierOutput, tau: f64) -> Result<DiseaseAnnotation> {
    check_threshold(tau)?;
    let present: Vec<usize> = output
        .probabilities
        .iter()
        .enumerate()
        .filter(|(_, &g)| g > tau)
        .map(|(m, _)| m)
        .collect();
    Ok(DiseaseAnnotation {
        is_normal: present.is_empty(),
        present,
    })
}

/// Trained (or freshly initialized) classifier weights with their
/// configuration and disease order.
#[derive(Clone, Debug)]
pub struct DiseaseClassifier {
    config: ClassifierConfig,
    diseases: Vec<String>,
    params: ParamStore,
}

impl DiseaseClassifier {
    /// Randomly initialized model; backbone weights come from
    /// `config.pretrained` when set.
    pub fn new(config: ClassifierConfig, diseases: Vec<String>) -> Result<Self> {
        config.validate()?;
        if diseases.is_empty() {
            return Err(Error::Config("classifier needs at least one disease".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let c = config.normalization.channels();
        config.backbone.init(BACKBONE, c, &mut params, &mut rng);
        let k = config.backbone.out_channels();
        params.init_uniform(&format!("{HEAD}weight"), &[k, diseases.len()], k, &mut rng);
        params.init_zeros(&format!("{HEAD}bias"), &[diseases.len()]);
        if let Some(path) = &config.pretrained {
            load_backbone(&mut params, path)?;
        }
        if config.freeze_backbone {
            params.freeze_all_except(&[HEAD]);
        }
        Ok(DiseaseClassifier {
            config,
            diseases,
            params,
        })
    }

    pub fn from_params(config: ClassifierConfig, diseases: Vec<String>, params: ParamStore) -> Result<Self> {
        let mut model = DiseaseClassifier::new(
            ClassifierConfig {
                pretrained: None,
                ..config.clone()
            },
            diseases,
        )?;
        model.params.load_from(&params)?;
        model.config = config;
        Ok(model)
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn diseases(&self) -> &[String] {
        &self.diseases
    }

    pub fn num_classes(&self) -> usize {
        self.diseases.len()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn channels(&self) -> usize {
        self.config.normalization.channels()
    }

    /// Resizes and normalizes a grayscale image into a `1 × C × S × S` input.
    pub fn preprocess(&self, img: &GrayImage) -> Tensor {
        imaging::to_tensor(img, self.config.input_size, &self.config.normalization)
    }

    /// Records the forward pass, returning the final activation maps and the
    /// `N × M` logits.
    pub fn forward(&self, g: &mut Graph, x: Var) -> (Var, Var) {
        let maps = self.config.backbone.forward(g, &self.params, BACKBONE, x);
        let pooled = g.mean_axes(maps, &[2, 3]);
        let w = g.param(&self.params, &format!("{HEAD}weight"));
        let b = g.param(&self.params, &format!("{HEAD}bias"));
        let z = g.matmul(pooled, w);
        let logits = g.add(z, b);
        (maps, logits)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = self.config.input_size as usize;
        let ok = x.ndim() == 4 && x.shape()[1..] == [self.channels(), s, s] && x.shape()[0] > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: format!("N×{}×{s}×{s}", self.channels()),
                actual: format!("{:?}", x.shape()),
            })
        }
    }

    pub fn classify(&self, x: &Tensor) -> Result<ClassifierOutput> {
        if x.shape().first() != Some(&1) {
            return Err(Error::ShapeMismatch {
                expected: "batch of one".into(),
                actual: format!("{:?}", x.shape()),
            });
        }
        Ok(self.classify_batch(x)?.remove(0))
    }

    pub fn classify_batch(&self, x: &Tensor) -> Result<Vec<ClassifierOutput>> {
        self.check_input(x)?;
        let mut g = Graph::inference();
        let input = g.input(x.clone());
        let (_, logits) = self.forward(&mut g, input);
        let z = g
            .value(logits)
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("logits are 2-D");
        Ok(z.rows().into_iter().map(|r| ClassifierOutput::from_logits(r.to_vec())).collect())
    }

    pub fn classify_image(&self, img: &GrayImage) -> Result<ClassifierOutput> {
        self.classify(&self.preprocess(img))
    }

    pub fn to_checkpoint(&self) -> Checkpoint<ClassifierConfig> {
        Checkpoint::new(CHECKPOINT_KIND, self.config.clone(), self.diseases.clone(), &self.params)
    }

    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<()> {
        let mut ckpt = self.to_checkpoint();
        ckpt.meta = meta;
        ckpt.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::<ClassifierConfig>::load(path, CHECKPOINT_KIND)?;
        let params = ckpt.param_store()?;
        Self::from_params(ckpt.config, ckpt.diseases, params).map_err(|e| Error::MalformedArtifact {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }
}

pub(crate) fn load_backbone(params: &mut ParamStore, path: &Path) -> Result<()> {
    let ckpt = Checkpoint::<serde_json::Value>::load(path, CHECKPOINT_KIND)?;
    let source = ckpt.param_store()?;
    let mut loaded = 0;
    for name in source.names().filter(|n| n.starts_with(BACKBONE)) {
        let value = source.get(name).unwrap();
        let slot = params.get_mut(name).ok_or_else(|| {
            Error::ArtifactMismatch(format!("pretrained parameter `{name}` not in backbone"))
        })?;
        if slot.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{name}{:?}", slot.shape()),
                actual: format!("{:?}", value.shape()),
            });
        }
        slot.assign(value);
        loaded += 1;
    }
    if loaded == 0 {
        return Err(Error::ArtifactMismatch(format!(
            "{} holds no backbone weights",
            path.display()
        )));
    }
    Ok(())
}

/// Stacks per-study probability vectors into an `N × M` score matrix.
pub fn score_matrix(outputs: &[ClassifierOutput]) -> Array2<f64> {
    let m = outputs.first().map_or(0, |o| o.probabilities.len());
    Array2::from_shape_fn((outputs.len(), m), |(i, j)| outputs[i].probabilities[j])
}

/// A single all-zero input of the classifier's expected shape.
pub fn zeros_input(model: &DiseaseClassifier) -> Tensor {
    let s = model.config.input_size as usize;
    ArrayD::zeros(IxDyn(&[1, model.channels(), s, s]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn output(g: &[f64]) -> ClassifierOutput {
        ClassifierOutput {
            logits: g.iter().map(|p| (p / (1.0 - p)).ln()).collect(),
            probabilities: g.to_vec(),
        }
    }

    #[test]
    fn bce_worked_examples() {
        let l = bce_loss(&output(&[0.5]), &[1]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let l = bce_loss(&output(&[0.9, 0.2]), &[1, 0]).unwrap();
        assert!((l - 0.328504).abs() < 1e-6, "{l}");
        let sat = ClassifierOutput {
            logits: vec![f64::INFINITY, f64::NEG_INFINITY],
            probabilities: vec![1.0, 0.0],
        };
        let l = bce_loss(&sat, &[1, 0]).unwrap();
        assert!(l.is_finite() && l < 1e-6);
        let wrong = bce_loss(&sat, &[0, 1]).unwrap();
        assert!(wrong.is_finite() && wrong > 30.0);
        assert!(bce_loss(&sat, &[1]).is_err());
    }

    #[test]
    fn annotate_uses_strict_threshold() {
        let mut g = vec![0.1; 8];
        g[1] = 0.85;
        let a = annotate(&output(&g), 0.8).unwrap();
        assert_eq!(a.present, vec![1]);
        assert!(!a.is_normal);

        let a = annotate(&output(&[0.8, 0.3, 0.8]), 0.8).unwrap();
        assert!(a.present.is_empty() && a.is_normal);
        assert!(annotate(&output(&[0.5]), 1.0).is_err());
    }

    fn tiny_model(m: usize) -> DiseaseClassifier {
        let config = ClassifierConfig {
            backbone: BackboneSpec::tiny(&[2]),
            input_size: 4,
            normalization: Normalization::identity(1),
            ..ClassifierConfig::default()
        };
        DiseaseClassifier::new(config, (0..m).map(|i| format!("d{i}")).collect()).unwrap()
    }

    #[test]
    fn zero_head_gives_half_probabilities() {
        let mut model = tiny_model(3);
        model.params_mut().get_mut("head.weight").unwrap().fill(0.0);
        let x = ArrayD::from_elem(IxDyn(&[1, 1, 4, 4]), 0.7);
        let out = model.classify(&x).unwrap();
        assert_eq!(out.logits, vec![0.0; 3]);
        assert_eq!(out.probabilities, vec![0.5; 3]);
    }

    #[test]
    fn tiny_forward_matches_hand_rolled_oracle() {
        let mut model = tiny_model(2);
        let p = model.params_mut();
        let w = [0.3, -0.2, 0.5, 0.1, 0.0, -0.4, 0.2, 0.25, -0.1];
        let w2 = [-0.5, 0.4, 0.3, 0.2, -0.1, 0.6, 0.05, -0.3, 0.7];
        let conv = p.get_mut("backbone.conv0.weight").unwrap();
        for (i, v) in w.iter().chain(&w2).enumerate() {
            conv.as_slice_mut().unwrap()[i] = *v;
        }
        p.get_mut("backbone.conv0.bias").unwrap().assign(&ndarray::arr1(&[0.1, -0.05]).into_dyn());
        p.get_mut("head.weight")
            .unwrap()
            .assign(&ndarray::arr2(&[[1.5, -0.5], [0.8, 2.0]]).into_dyn());
        p.get_mut("head.bias").unwrap().assign(&ndarray::arr1(&[0.2, -0.3]).into_dyn());

        // constant image c, zero padding: each output pixel sums the kernel
        // taps that land inside the 4×4 grid
        let c = 0.6;
        let kernels = [w, w2];
        let bias = [0.1, -0.05];
        let mut pooled = [0.0; 2];
        for k in 0..2 {
            let mut total = 0.0;
            for i in 0..4i32 {
                for j in 0..4i32 {
                    let mut acc = bias[k];
                    for di in -1..=1i32 {
                        for dj in -1..=1i32 {
                            let (y, x) = (i + di, j + dj);
                            if (0..4).contains(&y) && (0..4).contains(&x) {
                                acc += kernels[k][((di + 1) * 3 + dj + 1) as usize] * c;
                            }
                        }
                    }
                    total += acc.max(0.0);
                }
            }
            pooled[k] = total / 16.0;
        }
        let expected = [
            pooled[0] * 1.5 + pooled[1] * 0.8 + 0.2,
            pooled[0] * -0.5 + pooled[1] * 2.0 - 0.3,
        ];
        let x = ArrayD::from_elem(IxDyn(&[1, 1, 4, 4]), c);
        let out = model.classify(&x).unwrap();
        for (a, b) in out.logits.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(out, model.classify(&x).unwrap());
    }

    #[test]
    fn classify_rejects_wrong_shape() {
        let model = tiny_model(2);
        let x = ArrayD::zeros(IxDyn(&[1, 1, 5, 4]));
        assert!(matches!(model.classify(&x), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let model = tiny_model(2);
        let path = dir.path().join("c.json");
        model.save(&path, serde_json::json!({"epochs": 0})).unwrap();
        let back = DiseaseClassifier::load(&path).unwrap();
        let x = ArrayD::from_elem(IxDyn(&[1, 1, 4, 4]), 0.3);
        assert_eq!(model.classify(&x).unwrap(), back.classify(&x).unwrap());
        assert_eq!(back.diseases(), model.diseases());
    }

    #[test]
    fn pretrained_backbone_is_loaded_and_head_freezes() {
        let dir = tempfile::tempdir().unwrap();
        let src = tiny_model(2);
        let path = dir.path().join("pre.json");
        src.save(&path, serde_json::Value::Null).unwrap();
        let config = ClassifierConfig {
            pretrained: Some(path),
            freeze_backbone: true,
            seed: 99,
            ..src.config().clone()
        };
        let model = DiseaseClassifier::new(config, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        assert_eq!(
            model.params().get("backbone.conv0.weight"),
            src.params().get("backbone.conv0.weight")
        );
        assert!(!model.params().is_trainable("backbone.conv0.weight"));
        assert!(model.params().is_trainable("head.weight"));
    }

    fn bce_oracle(g: &[f64], y: &[u8]) -> f64 {
        let mut total = 0.0;
        for i in 0..g.len() {
            let p = g[i].max(1e-7).min(1.0 - 1e-7);
            let yi = y[i] as f64;
            total -= yi * p.ln() + (1.0 - yi) * (1.0 - p).ln();
        }
        total
    }

    proptest! {
        #[test]
        fn bce_matches_elementwise_oracle(
            pairs in prop::collection::vec((0.0f64..=1.0, 0u8..=1), 1..12)
        ) {
            let g: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            let l = bce_loss(&output(&g), &y).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert!((l - bce_oracle(&g, &y)).abs() < 1e-6);
        }

        #[test]
        fn raising_threshold_never_adds_diseases(
            g in prop::collection::vec(0.0f64..1.0, 1..10),
            t1 in 0.01f64..0.99, t2 in 0.01f64..0.99,
        ) {
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let a_lo = annotate(&output(&g), lo).unwrap();
            let a_hi = annotate(&output(&g), hi).unwrap();
            prop_assert!(a_hi.present.iter().all(|m| a_lo.present.contains(m)));
            prop_assert_eq!(a_hi.is_normal, a_hi.present.is_empty());
        }
    }
}
