//! Dataset ingestion: manifests, report normalization, vocabulary, disease
//! label extraction and patient-disjoint splitting.

mod labels;
mod split;
mod text;
mod vocab;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use labels::{filter_studies, sentence_mentions, LabelConfig, DEFAULT_DISEASES};
pub use split::{split_dataset, Split, SplitSpec};
pub use text::{preprocess_report, TokenizedReport};
pub use vocab::{Vocabulary, PAD, RESERVED, SEP, STOP, UNK};

/// One patient's frontal image with its report sections and MeSH terms.
///
/// Serialized as one manifest line:
/// `{"patient_id", "image", "impression", "findings", "mesh"}`; filtered
/// datasets also carry the derived `labels`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Study {
    pub patient_id: String,
    #[serde(rename = "image")]
    pub image_path: PathBuf,
    #[serde(default)]
    pub impression: String,
    #[serde(default)]
    pub findings: String,
    #[serde(rename = "mesh", default)]
    pub mesh_terms: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<u8>,
}

impl Study {
    pub fn report(&self) -> TokenizedReport {
        preprocess_report(&self.impression, &self.findings)
    }

    pub fn is_normal(&self) -> bool {
        self.labels.iter().all(|&l| l == 0)
    }
}

/// Reads a JSON-lines manifest. Relative image paths are resolved against
/// the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<Study>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut study: Study = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidInput(format!("{} line {}: {e}", path.display(), n + 1))
        })?;
        if study.image_path.is_relative() {
            study.image_path = base.join(&study.image_path);
        }
        out.push(study);
    }
    Ok(out)
}

/// Writes a JSON-lines manifest; image paths are written relative to
/// `relative_to` when they live beneath it.
pub fn write_manifest(path: &Path, studies: &[Study], relative_to: Option<&Path>) -> Result<()> {
    let file =
        File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    for s in studies {
        let mut s = s.clone();
        if let Some(base) = relative_to {
            if let Ok(rel) = s.image_path.strip_prefix(base) {
                s.image_path = rel.to_path_buf();
            }
        }
        serde_json::to_writer(&mut w, &s)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Fails if any patient contributes more than one study.
pub fn check_one_study_per_patient(dataset: &[Study]) -> Result<()> {
    let mut seen = HashSet::new();
    for s in dataset {
        if !seen.insert(s.patient_id.as_str()) {
            return Err(Error::InvalidInput(format!(
                "patient `{}` has more than one study",
                s.patient_id
            )));
        }
    }
    Ok(())
}

/// Number of studies carrying each label.
pub fn label_counts(dataset: &[Study], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for s in dataset {
        for (c, &l) in counts.iter_mut().zip(&s.labels) {
            *c += l as usize;
        }
    }
    counts
}
