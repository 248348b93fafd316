use image::GrayImage;

use super::{localize, DiseaseModel};
use crate::captioner::{DecoderRole, ImageEncoder, RegionFeatures};
use crate::corpus::{sentence_mentions, LabelConfig, TokenizedReport};
use crate::error::{Error, Result};
use crate::localization::LocalizationConfig;

/// A report split by disease: sentences mentioning each present disease,
/// and the remaining "normality" sentences.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SentencePartition {
    /// `(disease index, sentences mentioning it)` for every present label.
    pub abnormal: Vec<(usize, Vec<Vec<String>>)>,
    /// Sentences that mention none of the present diseases.
    pub normality: Vec<Vec<String>>,
}

/// A sentence counts as describing disease `m` when it contains one of its
/// keyword phrases; it may describe several diseases.
pub fn partition_sentences(report: &TokenizedReport, labels: &[u8], config: &LabelConfig) -> SentencePartition {
    let present: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == 1).map(|(m, _)| m).collect();
    let mut out = SentencePartition {
        abnormal: present.iter().map(|&m| (m, Vec::new())).collect(),
        normality: Vec::new(),
    };
    for s in &report.sentences {
        let mut any = false;
        for (m, list) in &mut out.abnormal {
            if sentence_mentions(config, *m, s) {
                list.push(s.clone());
                any = true;
            }
        }
        if !any {
            out.normality.push(s.clone());
        }
    }
    out
}

/// Training pairs for one decoder role.
///
/// * `normal`: original image → full report of each normal study.
/// * `<D>-abnormal`: Grad-CAM crop for `D` → sentences mentioning `D`.
/// * `<D>-normality`: original image → sentences mentioning no present
///   disease, over studies labelled `D`.
/// * `shared`: both kinds of pair for every class below `min_samples`.
///
/// `studies` pairs each image with its report and label vector. Pairs with
/// an empty target are skipped.
#[allow(clippy::too_many_arguments)]
pub fn decoder_pairs<C: DiseaseModel>(
    role: &DecoderRole,
    studies: &[(GrayImage, TokenizedReport, Vec<u8>)],
    classifier: &C,
    encoder: &ImageEncoder,
    labels: &LabelConfig,
    train_counts: &[usize],
    min_samples: usize,
    localization: &LocalizationConfig,
) -> Result<Vec<(RegionFeatures, TokenizedReport)>> {
    let diseases = classifier.diseases();
    if labels.diseases != diseases || train_counts.len() != diseases.len() {
        return Err(Error::ArtifactMismatch(
            "label config, classifier and train counts disagree on the disease list".into(),
        ));
    }
    // (disease, want abnormal pairs, want normality pairs)
    let targets: Vec<(usize, bool, bool)> = match role {
        DecoderRole::Normal => vec![],
        DecoderRole::Shared => (0..diseases.len())
            .filter(|&m| train_counts[m] < min_samples)
            .map(|m| (m, true, true))
            .collect(),
        DecoderRole::Abnormal(d) => vec![(labels.index_of(d)?, true, false)],
        DecoderRole::Normality(d) => vec![(labels.index_of(d)?, false, true)],
    };
    let side = encoder.config().input_size;
    let mut out = Vec::new();
    for (image, report, y) in studies {
        if y.len() != diseases.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", diseases.len()),
                actual: y.len().to_string(),
            });
        }
        if *role == DecoderRole::Normal {
            if y.iter().all(|&l| l == 0) && !report.is_empty() {
                out.push((encoder.encode_image(image)?, report.clone()));
            }
            continue;
        }
        let part = partition_sentences(report, y, labels);
        let mut original = None;
        for &(m, abnormal, normality) in &targets {
            if y[m] != 1 {
                continue;
            }
            if abnormal {
                let sents = part
                    .abnormal
                    .iter()
                    .find(|(k, _)| *k == m)
                    .map(|(_, s)| s.clone())
                    .unwrap_or_default();
                if !sents.is_empty() {
                    let heatmap = classifier.heatmaps(image, &[m])?.remove(0);
                    let loc = localize(image, &heatmap, localization, side)?;
                    out.push((encoder.encode_image(&loc.crop)?, TokenizedReport::new(sents)));
                }
            }
            if normality && !part.normality.is_empty() {
                if original.is_none() {
                    original = Some(encoder.encode_image(image)?);
                }
                let f = original.clone().expect("encoded above");
                out.push((f, TokenizedReport::new(part.normality.clone())));
            }
        }
    }
    Ok(out)
}
