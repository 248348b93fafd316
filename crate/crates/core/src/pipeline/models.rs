use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::GrayImage;

use crate::captioner::{DecoderRegistry, DecoderRole, Decoding};
use crate::checkpoint::file_digest;
use crate::classifier::{ClassifierOutput, DiseaseClassifier};
use crate::corpus::TokenizedReport;
use crate::error::{Error, Result};
use crate::localization::{grad_cam_many, Heatmap};

/// File names inside a models directory.
pub const CLASSIFIER_FILE: &str = "classifier.json";
pub const DECODER_DIR: &str = "decoders";

/// The image-level half of the pipeline: disease scores and Grad-CAM.
pub trait DiseaseModel {
    fn diseases(&self) -> &[String];

    fn classify(&self, image: &GrayImage) -> Result<ClassifierOutput>;

    /// Normalized Grad-CAM heatmaps, one per requested disease, at the
    /// model's input resolution.
    fn heatmaps(&self, image: &GrayImage, diseases: &[usize]) -> Result<Vec<Heatmap>>;

    fn digest(&self) -> String;
}

impl DiseaseModel for DiseaseClassifier {
    fn diseases(&self) -> &[String] {
        DiseaseClassifier::diseases(self)
    }

    fn classify(&self, image: &GrayImage) -> Result<ClassifierOutput> {
        self.classify_image(image)
    }

    fn heatmaps(&self, image: &GrayImage, diseases: &[usize]) -> Result<Vec<Heatmap>> {
        Ok(grad_cam_many(self, &self.preprocess(image), diseases)?
            .into_iter()
            .map(|c| c.heatmap)
            .collect())
    }

    fn digest(&self) -> String {
        self.params().digest()
    }
}

/// The text half: routing data plus one decoder per role.
pub trait ReportModel {
    fn diseases(&self) -> &[String];
    fn train_counts(&self) -> &[usize];
    fn min_samples(&self) -> usize;
    fn has(&self, role: &DecoderRole) -> bool;
    fn missing(&self, role: &DecoderRole) -> Error;
    /// Side length crops are resized to before encoding.
    fn crop_side(&self) -> u32;
    fn describe(&self, role: &DecoderRole, image: &GrayImage, mode: Decoding) -> Result<TokenizedReport>;
    fn digests(&self) -> BTreeMap<String, String>;
}

impl ReportModel for DecoderRegistry {
    fn diseases(&self) -> &[String] {
        DecoderRegistry::diseases(self)
    }

    fn train_counts(&self) -> &[usize] {
        DecoderRegistry::train_counts(self)
    }

    fn min_samples(&self) -> usize {
        DecoderRegistry::min_samples(self)
    }

    fn has(&self, role: &DecoderRole) -> bool {
        DecoderRegistry::has(self, role)
    }

    fn missing(&self, role: &DecoderRole) -> Error {
        Error::MissingArtifact {
            role: role.to_string(),
            path: self.path_for(role),
        }
    }

    fn crop_side(&self) -> u32 {
        self.encoder().config().input_size
    }

    fn describe(&self, role: &DecoderRole, image: &GrayImage, mode: Decoding) -> Result<TokenizedReport> {
        DecoderRegistry::describe(self, role, image, mode)
    }

    fn digests(&self) -> BTreeMap<String, String> {
        let m = self.manifest();
        let mut out = BTreeMap::new();
        out.insert("vocabulary".to_string(), m.vocab_hash.clone());
        let encoder = match &m.encoder {
            Some(e) => e.sha256.clone(),
            None => self.encoder().params().digest(),
        };
        out.insert("encoder".to_string(), encoder);
        for (role, entry) in &m.decoders {
            out.insert(format!("decoder:{role}"), entry.sha256.clone());
        }
        out
    }
}

/// A classifier and a decoder registry that agree on the disease list,
/// with their digests taken once.
pub struct Models<C, R> {
    pub classifier: C,
    pub reports: R,
    hashes: BTreeMap<String, String>,
}

impl<C: DiseaseModel, R: ReportModel> Models<C, R> {
    pub fn new(classifier: C, reports: R) -> Result<Self> {
        if classifier.diseases() != reports.diseases() {
            return Err(Error::ArtifactMismatch(format!(
                "classifier diseases {:?} differ from decoder registry diseases {:?}",
                classifier.diseases(),
                reports.diseases()
            )));
        }
        let mut hashes = reports.digests();
        hashes.insert("classifier".to_string(), classifier.digest());
        Ok(Models {
            classifier,
            reports,
            hashes,
        })
    }

    pub fn diseases(&self) -> &[String] {
        self.classifier.diseases()
    }

    pub fn hashes(&self) -> &BTreeMap<String, String> {
        &self.hashes
    }
}

pub type LoadedModels = Models<DiseaseClassifier, DecoderRegistry>;

impl LoadedModels {
    /// Opens `dir/classifier.json` and the registry under `dir/decoders`.
    /// The classifier hash is the checkpoint file digest.
    pub fn open(dir: &Path) -> Result<Self> {
        let ckpt = dir.join(CLASSIFIER_FILE);
        if !ckpt.exists() {
            return Err(Error::MissingArtifact {
                role: "classifier".into(),
                path: ckpt,
            });
        }
        let classifier = DiseaseClassifier::load(&ckpt)?;
        let registry = DecoderRegistry::open(&dir.join(DECODER_DIR))?;
        let mut models = Models::new(classifier, registry)?;
        models.hashes.insert("classifier".into(), file_digest(&ckpt)?);
        Ok(models)
    }
}

pub fn classifier_path(models_dir: &Path) -> PathBuf {
    models_dir.join(CLASSIFIER_FILE)
}

pub fn registry_path(models_dir: &Path) -> PathBuf {
    models_dir.join(DECODER_DIR)
}
