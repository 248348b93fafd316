//! Synthetic chest-film stand-ins for desk-scale runs: dark noisy frames
//! where each disease paints its own bright texture at its own location,
//! paired with templated reports and MeSH terms.
//!
//! Location alone is not enough: the classifier pools globally, so the
//! texture is what makes the classes separable, and the location is what
//! Grad-CAM should recover.

use std::path::Path;

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_manifest, Study, DEFAULT_DISEASES};
use crate::error::{Error, Result};

pub const NORMAL_IMPRESSION: &str = "No acute cardiopulmonary abnormality.";
pub const NORMAL_FINDINGS: &str =
    "The heart size is normal. The lungs are clear. Mediastinal contours are unremarkable.";
/// Findings kept for abnormal studies; none of them mentions a disease.
pub const BACKGROUND_FINDINGS: &str = "Mediastinal contours are unremarkable. No bony abnormality.";

/// Abnormality sentence for each of the eight default diseases.
pub fn disease_sentence(disease: &str) -> Option<&'static str> {
    let idx = DEFAULT_DISEASES.iter().position(|d| d.eq_ignore_ascii_case(disease))?;
    Some(
        [
            "There is mild basilar atelectasis.",
            "There is cardiomegaly.",
            "There is a small right pleural effusion.",
            "There is a patchy infiltrate.",
            "There is a large mass in the upper lobe.",
            "There is a small nodule.",
            "There is focal consolidation concerning for pneumonia.",
            "There is a small pneumothorax.",
        ][idx],
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_studies: usize,
    pub side: u32,
    /// Diseases that may appear; each must be one of the default eight.
    pub diseases: Vec<String>,
    pub abnormal_fraction: f64,
    /// Chance that an abnormal study carries a second disease.
    pub second_disease: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_studies: 120,
            side: 32,
            diseases: ["Cardiomegaly", "Effusion", "Nodule"].map(String::from).to_vec(),
            abnormal_fraction: 0.6,
            second_disease: 0.15,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_studies == 0 {
            return Err(Error::Config("n_studies must be positive".into()));
        }
        if self.side < 16 {
            return Err(Error::Config(format!("side {} is below the 16 px minimum", self.side)));
        }
        for p in [self.abnormal_fraction, self.second_disease] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        if self.diseases.is_empty() {
            return Err(Error::Config("synthetic disease list is empty".into()));
        }
        for d in &self.diseases {
            if disease_sentence(d).is_none() {
                return Err(Error::UnknownDisease(d.clone()));
            }
        }
        Ok(())
    }
}

/// Top-left corner of disease `d`'s marker on a 3×3 grid with the centre
/// cell left empty.
pub fn marker_origin(disease: &str, side: u32) -> Option<(u32, u32)> {
    let idx = DEFAULT_DISEASES.iter().position(|d| d.eq_ignore_ascii_case(disease))?;
    let cell = if idx >= 4 { idx + 1 } else { idx };
    let step = side / 3;
    let inset = (step - marker_size(side)) / 2;
    Some(((cell % 3) as u32 * step + inset, (cell / 3) as u32 * step + inset))
}

pub fn marker_size(side: u32) -> u32 {
    (side / 5).max(2)
}

/// Whether pixel `(dx, dy)` of disease `idx`'s marker is lit.
fn texture(idx: usize, dx: u32, dy: u32, size: u32) -> bool {
    let edge = dx == 0 || dy == 0 || dx == size - 1 || dy == size - 1;
    match idx {
        0 => dy % 2 == 0,
        1 => true,
        2 => dx % 2 == 0,
        3 => (dx + dy) % 2 == 0,
        4 => dx.abs_diff(size / 2) + dy.abs_diff(size / 2) <= size / 2,
        5 => edge,
        6 => (dx + dy) % 3 == 0,
        _ => dx == size / 2 || dy == size / 2,
    }
}

/// Frame with the given diseases painted in; background noise comes from
/// `rng`.
pub fn render(side: u32, diseases: &[&str], rng: &mut impl Rng) -> GrayImage {
    let mut img = GrayImage::from_fn(side, side, |_, y| {
        let base = 40.0 + 20.0 * y as f64 / side as f64;
        Luma([(base + rng.random_range(-8.0..8.0)).round() as u8])
    });
    let size = marker_size(side);
    for d in diseases {
        let Some(idx) = DEFAULT_DISEASES.iter().position(|k| k.eq_ignore_ascii_case(d)) else {
            continue;
        };
        let (x0, y0) = marker_origin(d, side).expect("known disease");
        for dy in 0..size {
            for dx in 0..size {
                if texture(idx, dx, dy, size) {
                    img.put_pixel(x0 + dx, y0 + dy, Luma([220]));
                }
            }
        }
    }
    img
}

/// Study text for a set of diseases; empty means a normal study.
pub fn report_for(diseases: &[&str]) -> (String, String, Vec<String>) {
    if diseases.is_empty() {
        return (NORMAL_IMPRESSION.into(), NORMAL_FINDINGS.into(), vec!["normal".into()]);
    }
    let impression = diseases
        .iter()
        .filter_map(|d| disease_sentence(d))
        .collect::<Vec<_>>()
        .join(" ");
    let mesh = diseases.iter().map(|d| format!("{d}/mild")).collect();
    (impression, BACKGROUND_FINDINGS.into(), mesh)
}

/// A generated study with its image still in memory. `study.image_path`
/// is the path the image is written to relative to the dataset root.
#[derive(Clone, Debug)]
pub struct SynthStudy {
    pub study: Study,
    pub image: GrayImage,
    pub diseases: Vec<String>,
}

pub fn generate(config: &SynthConfig) -> Result<Vec<SynthStudy>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = config.n_studies.to_string().len();
    let mut out = Vec::with_capacity(config.n_studies);
    for i in 0..config.n_studies {
        let mut chosen: Vec<&str> = Vec::new();
        if rng.random_bool(config.abnormal_fraction) {
            let first = rng.random_range(0..config.diseases.len());
            chosen.push(&config.diseases[first]);
            if config.diseases.len() > 1 && rng.random_bool(config.second_disease) {
                let mut second = rng.random_range(0..config.diseases.len() - 1);
                if second >= first {
                    second += 1;
                }
                chosen.push(&config.diseases[second]);
            }
        }
        let image = render(config.side, &chosen, &mut rng);
        let (impression, findings, mesh) = report_for(&chosen);
        let id = format!("synth{:0width$}", i, width = width);
        out.push(SynthStudy {
            study: Study {
                patient_id: id.clone(),
                image_path: Path::new("images").join(format!("{id}.png")),
                impression,
                findings,
                mesh_terms: mesh,
                labels: vec![],
            },
            image,
            diseases: chosen.into_iter().map(String::from).collect(),
        });
    }
    Ok(out)
}

/// Writes `images/*.png` and `manifest.jsonl` under `dir`; returns the
/// manifest path.
pub fn write_dataset(dir: &Path, config: &SynthConfig) -> Result<std::path::PathBuf> {
    let studies = generate(config)?;
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(format!("creating {}", images.display()), e))?;
    let mut rows = Vec::with_capacity(studies.len());
    for s in studies {
        let path = dir.join(&s.study.image_path);
        s.image.save(&path)?;
        rows.push(Study {
            image_path: path,
            ..s.study
        });
    }
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&manifest, &rows, Some(dir))?;
    Ok(manifest)
}
