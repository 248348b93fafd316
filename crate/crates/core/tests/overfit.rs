//! Desk-scale overfitting on a 20-study synthetic set: the decoder must
//! regenerate its training reports and the classifier must separate the
//! painted markers.

use std::time::Instant;

use cxr::captioner::{train_decoder, DecoderConfig, Decoding, EncoderConfig, ImageEncoder};
use cxr::classifier::{auroc_per_class, mean_auroc, score_matrix, train_classifier, ClassifierConfig, LabeledImage};
use cxr::corpus::{filter_studies, LabelConfig, TokenizedReport, Vocabulary};
use cxr::metrics::{bleu, single_references};
use cxr::synth::{generate, SynthConfig};
use ndarray::Array2;

fn dataset() -> Vec<cxr::synth::SynthStudy> {
    generate(&SynthConfig {
        n_studies: 20,
        seed: 11,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn decoder_regenerates_training_reports() {
    let start = Instant::now();
    let data = dataset();
    let reports: Vec<TokenizedReport> = data.iter().map(|s| s.study.report()).collect();
    let vocab = Vocabulary::build(&reports).unwrap();
    let enc = ImageEncoder::new(EncoderConfig::tiny()).unwrap();
    let pairs: Vec<_> = data
        .iter()
        .zip(&reports)
        .map(|(s, r)| (enc.encode_image(&s.image).unwrap(), r.clone()))
        .collect();
    let trained = train_decoder(&pairs, &[], &vocab, &DecoderConfig::tiny()).unwrap();

    let first: Vec<f64> = trained.log.iter().take(10).map(|e| e.train_loss).collect();
    let rises = first.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises <= 1, "loss curve {first:?}");

    let cands: Vec<Vec<String>> = pairs
        .iter()
        .map(|(f, _)| trained.decoder.describe(f, &vocab, Decoding::Greedy).unwrap().flat())
        .collect();
    let refs: Vec<Vec<String>> = reports.iter().map(|r| r.flat()).collect();
    let b = bleu(&cands, &single_references(&refs)).unwrap();
    eprintln!(
        "epochs {} best {} bleu {:?} in {:?}",
        trained.log.len(),
        trained.best_epoch,
        b,
        start.elapsed()
    );
    assert!(b[3] > 0.95, "BLEU-4 {}", b[3]);
}

#[test]
fn classifier_separates_markers() {
    let start = Instant::now();
    let data = dataset();
    let labels = LabelConfig::default();
    let studies: Vec<_> = data.iter().map(|s| s.study.clone()).collect();
    let kept = filter_studies(&studies, &labels).unwrap();
    let config = ClassifierConfig::tiny();
    let model = cxr::classifier::DiseaseClassifier::new(config.clone(), labels.diseases.clone()).unwrap();
    let train: Vec<LabeledImage> = data
        .iter()
        .zip(&kept)
        .map(|(s, k)| LabeledImage {
            image: model.preprocess(&s.image),
            labels: k.labels.clone(),
        })
        .collect();
    let trained = train_classifier(&train, &train, &config, &labels.diseases).unwrap();
    let outs: Vec<_> = train.iter().map(|x| trained.model.classify(&x.image).unwrap()).collect();
    let scores = score_matrix(&outs);
    let y = Array2::from_shape_fn(scores.dim(), |(i, m)| train[i].labels[m]);
    let per = auroc_per_class(scores.view(), y.view());
    eprintln!("auroc {per:?} epochs {} in {:?}", trained.log.len(), start.elapsed());
    assert!(per.iter().flatten().count() >= 3);
    assert_eq!(mean_auroc(&per), Some(1.0));
}
