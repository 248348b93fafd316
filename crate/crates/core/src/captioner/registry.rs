use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::{Decoder, Decoding, ImageEncoder};
use crate::checkpoint::file_digest;
use crate::classifier::DiseaseAnnotation;
use crate::corpus::{TokenizedReport, Vocabulary};
use crate::error::{Error, Result};

/// Classes with fewer training samples than this share one decoder.
pub const MIN_DEDICATED_SAMPLES: usize = 50;

const MANIFEST: &str = "manifest.json";
const VOCAB: &str = "vocab.json";
const ENCODER: &str = "encoder.json";
const FORMAT: &str = "cxr-decoder-registry";

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum DecoderRole {
    /// Full reports for studies annotated normal.
    Normal,
    /// Rare-class abnormality and normality text.
    Shared,
    /// Abnormality sentences from the disease's cropped region.
    Abnormal(String),
    /// Normality sentences from the original image of a diseased study.
    Normality(String),
}

impl DecoderRole {
    pub fn disease(&self) -> Option<&str> {
        match self {
            DecoderRole::Abnormal(d) | DecoderRole::Normality(d) => Some(d),
            _ => None,
        }
    }

    pub fn file_name(&self) -> String {
        format!("{self}.json")
    }
}

impl fmt::Display for DecoderRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecoderRole::Normal => f.write_str("normal"),
            DecoderRole::Shared => f.write_str("shared"),
            DecoderRole::Abnormal(d) => write!(f, "{d}-abnormal"),
            DecoderRole::Normality(d) => write!(f, "{d}-normality"),
        }
    }
}

impl FromStr for DecoderRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(DecoderRole::Normal),
            "shared" => Ok(DecoderRole::Shared),
            _ => {
                if let Some(d) = s.strip_suffix("-abnormal").filter(|d| !d.is_empty()) {
                    Ok(DecoderRole::Abnormal(d.to_string()))
                } else if let Some(d) = s.strip_suffix("-normality").filter(|d| !d.is_empty()) {
                    Ok(DecoderRole::Normality(d.to_string()))
                } else {
                    Err(Error::Config(format!(
                        "unknown decoder role `{s}`; expected normal, shared, <disease>-abnormal or <disease>-normality"
                    )))
                }
            }
        }
    }
}

impl From<DecoderRole> for String {
    fn from(r: DecoderRole) -> String {
        r.to_string()
    }
}

impl TryFrom<String> for DecoderRole {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
}

/// On-disk index binding every decoder to the vocabulary and the training
/// counts used for routing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryManifest {
    pub format: String,
    pub vocab_hash: String,
    pub diseases: Vec<String>,
    pub train_counts: Vec<usize>,
    pub min_samples: usize,
    pub encoder: Option<ArtifactEntry>,
    pub decoders: BTreeMap<DecoderRole, ArtifactEntry>,
}

/// Decoders chosen for one annotated disease.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderChoice {
    pub disease: usize,
    pub abnormal: DecoderRole,
    pub normality: DecoderRole,
    /// True when the class is rare and routed to the shared decoder.
    pub shared: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub normal: Option<DecoderRole>,
    pub diseases: Vec<DecoderChoice>,
}

impl Selection {
    pub fn roles(&self) -> BTreeSet<DecoderRole> {
        let mut out: BTreeSet<DecoderRole> = self.normal.iter().cloned().collect();
        for c in &self.diseases {
            out.insert(c.abnormal.clone());
            out.insert(c.normality.clone());
        }
        out
    }
}

/// Routing without touching any artifact: normal studies go to the normal
/// decoder, common classes to their dedicated pair, rare classes to the
/// shared decoder.
pub fn plan_routes(
    diseases: &[String],
    annotation: &DiseaseAnnotation,
    train_counts: &[usize],
    min_samples: usize,
) -> Result<Selection> {
    if train_counts.len() != diseases.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} train counts", diseases.len()),
            actual: train_counts.len().to_string(),
        });
    }
    if annotation.is_normal {
        return Ok(Selection {
            normal: Some(DecoderRole::Normal),
            diseases: vec![],
        });
    }
    let choices = annotation
        .present
        .iter()
        .map(|&m| {
            let name = diseases.get(m).ok_or(Error::DiseaseIndex {
                index: m,
                count: diseases.len(),
            })?;
            Ok(if train_counts[m] >= min_samples {
                DecoderChoice {
                    disease: m,
                    abnormal: DecoderRole::Abnormal(name.clone()),
                    normality: DecoderRole::Normality(name.clone()),
                    shared: false,
                }
            } else {
                DecoderChoice {
                    disease: m,
                    abnormal: DecoderRole::Shared,
                    normality: DecoderRole::Shared,
                    shared: true,
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Selection {
        normal: None,
        diseases: choices,
    })
}

/// Routes an annotation and checks every chosen decoder is present.
pub fn select_decoder(
    registry: &DecoderRegistry,
    annotation: &DiseaseAnnotation,
    train_counts: &[usize],
) -> Result<Selection> {
    let sel = plan_routes(registry.diseases(), annotation, train_counts, registry.min_samples())?;
    for role in sel.roles() {
        if !registry.has(&role) {
            return Err(Error::MissingArtifact {
                path: registry.path_for(&role),
                role: role.to_string(),
            });
        }
    }
    Ok(sel)
}

/// The encoder, vocabulary and every trained decoder, optionally backed by
/// a directory.
#[derive(Clone, Debug)]
pub struct DecoderRegistry {
    root: Option<PathBuf>,
    manifest: RegistryManifest,
    vocab: Vocabulary,
    encoder: ImageEncoder,
    decoders: BTreeMap<DecoderRole, Decoder>,
}

impl DecoderRegistry {
    pub fn in_memory(vocab: Vocabulary, encoder: ImageEncoder, diseases: Vec<String>, train_counts: Vec<usize>) -> Result<Self> {
        if diseases.len() != train_counts.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} train counts", diseases.len()),
                actual: train_counts.len().to_string(),
            });
        }
        Ok(DecoderRegistry {
            root: None,
            manifest: RegistryManifest {
                format: FORMAT.into(),
                vocab_hash: vocab.hash(),
                diseases,
                train_counts,
                min_samples: MIN_DEDICATED_SAMPLES,
                encoder: None,
                decoders: BTreeMap::new(),
            },
            vocab,
            encoder,
            decoders: BTreeMap::new(),
        })
    }

    /// Starts a registry directory holding the vocabulary and encoder.
    pub fn create(
        dir: &Path,
        vocab: Vocabulary,
        encoder: ImageEncoder,
        diseases: Vec<String>,
        train_counts: Vec<usize>,
    ) -> Result<Self> {
        let mut reg = Self::in_memory(vocab, encoder, diseases, train_counts)?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let vocab_path = dir.join(VOCAB);
        std::fs::write(&vocab_path, reg.vocab.to_json()?)
            .map_err(|e| Error::io(format!("writing {}", vocab_path.display()), e))?;
        let enc_path = dir.join(ENCODER);
        reg.encoder.save(&enc_path)?;
        reg.manifest.encoder = Some(ArtifactEntry {
            file: ENCODER.into(),
            sha256: file_digest(&enc_path)?,
        });
        reg.root = Some(dir.to_path_buf());
        reg.write_manifest()?;
        Ok(reg)
    }

    /// Loads a registry directory, verifying digests and vocabulary hashes.
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                role: "registry manifest".into(),
                path: manifest_path.clone(),
            },
            _ => Error::io(format!("reading {}", manifest_path.display()), e),
        })?;
        let malformed = |path: &Path, detail: String| Error::MalformedArtifact {
            path: path.to_path_buf(),
            detail,
        };
        let manifest: RegistryManifest =
            serde_json::from_str(&text).map_err(|e| malformed(&manifest_path, e.to_string()))?;
        if manifest.format != FORMAT {
            return Err(malformed(&manifest_path, format!("unexpected format `{}`", manifest.format)));
        }
        let vocab_path = dir.join(VOCAB);
        let vocab_text = std::fs::read_to_string(&vocab_path)
            .map_err(|e| Error::io(format!("reading {}", vocab_path.display()), e))?;
        let vocab = Vocabulary::from_json(&vocab_text)?;
        if vocab.hash() != manifest.vocab_hash {
            return Err(Error::ArtifactMismatch(format!(
                "{} does not match the registry's vocabulary hash",
                vocab_path.display()
            )));
        }
        let entry = manifest
            .encoder
            .clone()
            .ok_or_else(|| malformed(&manifest_path, "no encoder entry".into()))?;
        let enc_path = dir.join(&entry.file);
        verify(&enc_path, &entry, "encoder")?;
        let encoder = ImageEncoder::load(&enc_path)?;

        let mut decoders = BTreeMap::new();
        for (role, entry) in &manifest.decoders {
            let path = dir.join(&entry.file);
            verify(&path, entry, &role.to_string())?;
            let (dec, hash) = Decoder::load(&path)?;
            if hash != manifest.vocab_hash {
                return Err(Error::ArtifactMismatch(format!(
                    "decoder `{role}` was trained with a different vocabulary"
                )));
            }
            decoders.insert(role.clone(), dec);
        }
        Ok(DecoderRegistry {
            root: Some(dir.to_path_buf()),
            manifest,
            vocab,
            encoder,
            decoders,
        })
    }

    fn write_manifest(&self) -> Result<()> {
        if let Some(root) = &self.root {
            let path = root.join(MANIFEST);
            let text = serde_json::to_string_pretty(&self.manifest)?;
            std::fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }

    /// Changes the dedicated-decoder cutoff used for routing.
    pub fn set_min_samples(&mut self, n: usize) -> Result<()> {
        self.manifest.min_samples = n;
        self.write_manifest()
    }

    /// Decoder roles routing can ask for: `normal`, a pair for every class
    /// with at least `min_samples` training studies, and `shared` when some
    /// class has training studies but fewer than that. Classes never seen in
    /// training would also route to `shared` but cannot train it.
    pub fn required_roles(&self) -> Vec<DecoderRole> {
        let m = &self.manifest;
        let mut out = vec![DecoderRole::Normal];
        for (d, &n) in m.diseases.iter().zip(&m.train_counts) {
            if n >= m.min_samples {
                out.push(DecoderRole::Abnormal(d.clone()));
                out.push(DecoderRole::Normality(d.clone()));
            }
        }
        if m.train_counts.iter().any(|&n| n > 0 && n < m.min_samples) {
            out.push(DecoderRole::Shared);
        }
        out
    }

    fn check_role(&self, role: &DecoderRole) -> Result<()> {
        if let Some(d) = role.disease() {
            if !self.manifest.diseases.iter().any(|x| x == d) {
                return Err(Error::UnknownDisease(d.to_string()));
            }
        }
        Ok(())
    }

    /// Adds or replaces a decoder, persisting it when directory-backed.
    pub fn insert(&mut self, role: DecoderRole, decoder: Decoder, meta: serde_json::Value) -> Result<()> {
        self.check_role(&role)?;
        if decoder.vocab_size() != self.vocab.len() || decoder.feature_dim() != self.encoder.dim() {
            return Err(Error::ArtifactMismatch(format!(
                "decoder `{role}` expects vocabulary {} / features {}, registry has {} / {}",
                decoder.vocab_size(),
                decoder.feature_dim(),
                self.vocab.len(),
                self.encoder.dim()
            )));
        }
        if let Some(root) = &self.root {
            let path = root.join(role.file_name());
            decoder.save(&path, &self.manifest.vocab_hash, meta)?;
            let entry = ArtifactEntry {
                file: role.file_name(),
                sha256: file_digest(&path)?,
            };
            self.manifest.decoders.insert(role.clone(), entry);
            self.write_manifest()?;
        } else {
            self.manifest.decoders.insert(
                role.clone(),
                ArtifactEntry {
                    file: role.file_name(),
                    sha256: decoder.params().digest(),
                },
            );
        }
        self.decoders.insert(role, decoder);
        Ok(())
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn path_for(&self, role: &DecoderRole) -> PathBuf {
        self.root.clone().unwrap_or_default().join(role.file_name())
    }

    pub fn has(&self, role: &DecoderRole) -> bool {
        self.decoders.contains_key(role)
    }

    pub fn get(&self, role: &DecoderRole) -> Result<&Decoder> {
        self.decoders.get(role).ok_or_else(|| Error::MissingArtifact {
            role: role.to_string(),
            path: self.path_for(role),
        })
    }

    pub fn roles(&self) -> impl Iterator<Item = &DecoderRole> {
        self.decoders.keys()
    }

    pub fn manifest(&self) -> &RegistryManifest {
        &self.manifest
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn encoder(&self) -> &ImageEncoder {
        &self.encoder
    }

    pub fn diseases(&self) -> &[String] {
        &self.manifest.diseases
    }

    pub fn train_counts(&self) -> &[usize] {
        &self.manifest.train_counts
    }

    pub fn min_samples(&self) -> usize {
        self.manifest.min_samples
    }

    /// Encodes `image` and decodes a report with the decoder for `role`.
    pub fn describe(&self, role: &DecoderRole, image: &GrayImage, mode: Decoding) -> Result<TokenizedReport> {
        let decoder = self.get(role)?;
        let features = self.encoder.encode_image(image)?;
        decoder.describe(&features, &self.vocab, mode)
    }
}

fn verify(path: &Path, entry: &ArtifactEntry, role: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            role: role.to_string(),
            path: path.to_path_buf(),
        });
    }
    if file_digest(path)? != entry.sha256 {
        return Err(Error::ArtifactMismatch(format!(
            "{} does not match its manifest digest",
            path.display()
        )));
    }
    Ok(())
}
