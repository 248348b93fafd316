use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Study;
use crate::error::{Error, Result};

/// The eight target thoracic diseases; position fixes the label index.
pub const DEFAULT_DISEASES: [&str; 8] = [
    "Atelectasis",
    "Cardiomegaly",
    "Effusion",
    "Infiltration",
    "Mass",
    "Nodule",
    "Pneumonia",
    "Pneumothorax",
];

/// Disease list plus the synonym table used to map MeSH terms onto labels.
///
/// A term carries disease `m` when it contains, case-insensitively, the
/// disease name or any synonym mapped to it.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LabelConfig {
    pub diseases: Vec<String>,
    pub synonyms: BTreeMap<String, String>,
    /// Extra report keywords marking a sentence as describing the disease.
    pub keywords: BTreeMap<String, Vec<String>>,
}

impl Default for LabelConfig {
    fn default() -> Self {
        let synonyms = [
            ("pleural effusion", "Effusion"),
            ("infiltrate", "Infiltration"),
            ("enlarged heart", "Cardiomegaly"),
            ("cardiac enlargement", "Cardiomegaly"),
            ("collapse", "Atelectasis"),
            ("pulmonary nodule", "Nodule"),
        ];
        let keywords = [
            ("Atelectasis", &["atelectasis", "atelectatic", "collapse"][..]),
            ("Cardiomegaly", &["cardiomegaly", "enlarged", "enlargement"][..]),
            ("Effusion", &["effusion", "effusions"][..]),
            ("Infiltration", &["infiltrate", "infiltrates", "infiltration"][..]),
            ("Mass", &["mass", "masses"][..]),
            ("Nodule", &["nodule", "nodules", "nodular"][..]),
            ("Pneumonia", &["pneumonia", "consolidation"][..]),
            ("Pneumothorax", &["pneumothorax"][..]),
        ];
        LabelConfig {
            diseases: DEFAULT_DISEASES.iter().map(|s| s.to_string()).collect(),
            synonyms: synonyms
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            keywords: keywords
                .iter()
                .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
                .collect(),
        }
    }
}

impl LabelConfig {
    /// Rejects diseases outside the known eight, duplicates, and synonyms or
    /// keyword entries naming an unknown disease. Entries for known diseases
    /// absent from a reduced list are ignored.
    pub fn validate(&self) -> Result<()> {
        if self.diseases.is_empty() {
            return Err(Error::Config("disease list is empty".into()));
        }
        let mut seen = Vec::new();
        for d in &self.diseases {
            let known = DEFAULT_DISEASES.iter().any(|k| k.eq_ignore_ascii_case(d));
            if !known {
                return Err(Error::UnknownDisease(d.clone()));
            }
            let lower = d.to_lowercase();
            if seen.contains(&lower) {
                return Err(Error::Config(format!("disease `{d}` listed twice")));
            }
            seen.push(lower);
        }
        for target in self.synonyms.values().chain(self.keywords.keys()) {
            if !DEFAULT_DISEASES.iter().any(|k| k.eq_ignore_ascii_case(target)) {
                return Err(Error::UnknownDisease(target.clone()));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.diseases.len()
    }

    pub fn index_of(&self, disease: &str) -> Result<usize> {
        self.diseases
            .iter()
            .position(|d| d.eq_ignore_ascii_case(disease))
            .ok_or_else(|| Error::UnknownDisease(disease.to_string()))
    }

    /// Label vector for a list of MeSH terms, plus whether any term states
    /// "normal".
    pub fn labels_for(&self, mesh_terms: &[String]) -> (Vec<u8>, bool) {
        let mut labels = vec![0u8; self.diseases.len()];
        let mut normal = false;
        for term in mesh_terms {
            let term = term.to_lowercase();
            let head = term.split('/').next().unwrap_or("").trim();
            if head == "normal" {
                normal = true;
            }
            for (m, d) in self.diseases.iter().enumerate() {
                if term.contains(&d.to_lowercase()) {
                    labels[m] = 1;
                }
            }
            for (syn, target) in &self.synonyms {
                if term.contains(&syn.to_lowercase()) {
                    if let Ok(m) = self.index_of(target) {
                        labels[m] = 1;
                    }
                }
            }
        }
        (labels, normal)
    }

    /// Lowercase keyword phrases whose presence marks a sentence as
    /// describing disease `m`.
    pub fn sentence_keywords(&self, m: usize) -> Vec<String> {
        let name = &self.diseases[m];
        let mut kw = vec![name.to_lowercase()];
        for (syn, target) in &self.synonyms {
            if target.eq_ignore_ascii_case(name) {
                kw.push(syn.to_lowercase());
            }
        }
        for (target, words) in &self.keywords {
            if target.eq_ignore_ascii_case(name) {
                kw.extend(words.iter().map(|w| w.to_lowercase()));
            }
        }
        kw.sort();
        kw.dedup();
        kw
    }
}

/// True when the token sequence contains any keyword phrase of disease `m`
/// as whole words.
pub fn sentence_mentions(config: &LabelConfig, m: usize, sentence: &[String]) -> bool {
    let padded = format!(" {} ", sentence.join(" "));
    config
        .sentence_keywords(m)
        .iter()
        .any(|kw| padded.contains(&format!(" {kw} ")))
}

/// Keeps studies whose MeSH terms state "normal" or name at least one target
/// disease, and fills in their label vectors.
pub fn filter_studies(dataset: &[Study], config: &LabelConfig) -> Result<Vec<Study>> {
    config.validate()?;
    Ok(dataset
        .iter()
        .filter_map(|s| {
            let (labels, normal) = config.labels_for(&s.mesh_terms);
            let any = labels.iter().any(|&l| l == 1);
            (any || normal).then(|| Study {
                labels,
                ..s.clone()
            })
        })
        .collect())
}
