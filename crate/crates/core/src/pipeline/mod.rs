//! The full interpretation workflow: classify, threshold, localize each
//! present disease, route to decoders and assemble a tagged report.

mod evaluate;
mod models;
mod pairs;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::captioner::{plan_routes, DecoderChoice, DecoderRole, Decoding};
use crate::checkpoint::json_digest;
use crate::classifier::{annotate, ClassifierOutput, DiseaseAnnotation};
use crate::corpus::TokenizedReport;
use crate::error::{Error, Result};
use crate::localization::{crop_box, crop_roi, extract_bbox, render_overlay, BoundingBox, Heatmap, LocalizationConfig};

pub use evaluate::{evaluate_pipeline, EvaluationReport};
pub use models::{
    classifier_path, registry_path, DiseaseModel, LoadedModels, Models, ReportModel, CLASSIFIER_FILE, DECODER_DIR,
};
pub use pairs::{decoder_pairs, partition_sentences, SentencePartition};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub threshold: f64,
    pub localization: LocalizationConfig,
    pub decoding: Decoding,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            threshold: 0.8,
            localization: LocalizationConfig::default(),
            decoding: Decoding::Greedy,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        self.localization.validate()
    }
}

/// Where a report sentence came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SentenceTag {
    /// Generated from the cropped region of an annotated disease.
    Abnormality { disease: String, role: DecoderRole },
    /// Generated from the original image.
    Normality { role: DecoderRole },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSentence {
    pub text: String,
    pub tokens: Vec<String>,
    #[serde(flatten)]
    pub tag: SentenceTag,
    /// False for the canned sentence used when a decoder produced nothing.
    pub generated: bool,
}

impl ReportSentence {
    fn new(tokens: Vec<String>, tag: SentenceTag, generated: bool) -> Self {
        ReportSentence {
            text: format!("{}.", tokens.join(" ")),
            tokens,
            tag,
            generated,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub sentences: Vec<ReportSentence>,
}

impl Report {
    pub fn text(&self) -> String {
        self.sentences.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ")
    }

    pub fn tokenized(&self) -> TokenizedReport {
        TokenizedReport::new(self.sentences.iter().map(|s| s.tokens.clone()).collect())
    }

    /// Diseases with at least one abnormality sentence.
    pub fn abnormal_diseases(&self) -> BTreeSet<String> {
        self.sentences
            .iter()
            .filter_map(|s| match &s.tag {
                SentenceTag::Abnormality { disease, .. } => Some(disease.clone()),
                _ => None,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSummary {
    pub diseases: Vec<String>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub threshold: f64,
    /// Present disease names, ascending by index.
    pub present: Vec<String>,
    pub is_normal: bool,
}

/// Heatmap and crop kept in memory for writing artifacts.
#[derive(Clone, Debug)]
pub struct Visuals {
    pub heatmap: Heatmap,
    pub crop: GrayImage,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Finding {
    pub disease: String,
    pub index: usize,
    pub probability: f64,
    /// Thresholded box in original-image pixels.
    pub bbox: BoundingBox,
    /// Box after padding; the region handed to the abnormality decoder.
    pub crop_box: BoundingBox,
    /// True when the heatmap was empty and the whole image was used.
    pub whole_image: bool,
    pub route: DecoderChoice,
    /// Artifact paths relative to the result file, once written.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub artifacts: BTreeMap<String, String>,
    #[serde(skip)]
    pub visuals: Option<Visuals>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: PipelineConfig,
    pub config_hash: String,
    pub model_hashes: BTreeMap<String, String>,
    pub threshold: f64,
    pub timestamp: String,
    pub version: String,
    pub warnings: Vec<String>,
    /// Fully resolved configuration of the command that produced the
    /// result, when run from a front end.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<serde_json::Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InterpretationResult {
    pub annotation: AnnotationSummary,
    pub findings: Vec<Finding>,
    pub report: Report,
    pub provenance: Provenance,
}

impl InterpretationResult {
    pub fn is_normal(&self) -> bool {
        self.annotation.is_normal
    }

    /// Writes `result.json` plus `overlay_<disease>.png`, `crop_<disease>.png`
    /// and `heatmap_<disease>.npy` for every finding; returns the JSON path.
    pub fn write(&mut self, dir: &Path, image: &GrayImage) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        for f in &mut self.findings {
            let Some(v) = &f.visuals else { continue };
            let slug = f.disease.to_lowercase();
            let overlay = format!("overlay_{slug}.png");
            render_overlay(image, &v.heatmap, Some(&f.bbox)).save(dir.join(&overlay))?;
            let crop = format!("crop_{slug}.png");
            v.crop.save(dir.join(&crop))?;
            let npy = format!("heatmap_{slug}.npy");
            v.heatmap.write_npy(&dir.join(&npy))?;
            f.artifacts.insert("overlay".into(), overlay);
            f.artifacts.insert("crop".into(), crop);
            f.artifacts.insert("heatmap".into(), npy);
        }
        let path = dir.join("result.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(path)
    }
}

/// Per-disease work that does not depend on the threshold, kept so a
/// re-query only localizes and decodes newly present diseases.
#[derive(Clone, Debug)]
struct DiseaseWork {
    finding: Finding,
    abnormal: Vec<ReportSentence>,
    normality: Vec<ReportSentence>,
    warnings: Vec<String>,
}

/// Classifier scores and per-disease results for one image.
#[derive(Clone, Debug, Default)]
pub struct InterpretCache {
    scores: Option<ClassifierOutput>,
    diseases: BTreeMap<usize, DiseaseWork>,
    normal: Option<(Vec<ReportSentence>, Vec<String>)>,
}

impl InterpretCache {
    /// A cache seeded with scores computed elsewhere.
    pub fn with_scores(scores: ClassifierOutput) -> Self {
        InterpretCache {
            scores: Some(scores),
            ..Self::default()
        }
    }

    pub fn scores(&self) -> Option<&ClassifierOutput> {
        self.scores.as_ref()
    }

    pub fn cached_diseases(&self) -> impl Iterator<Item = usize> + '_ {
        self.diseases.keys().copied()
    }
}

/// Box and crop for one heatmap at model resolution.
pub struct Localized {
    pub bbox: BoundingBox,
    pub crop_box: BoundingBox,
    pub crop: GrayImage,
    pub whole_image: bool,
}

/// Thresholds `heatmap`, maps the box onto `image`, and crops it to
/// `side × side`. An all-zero heatmap falls back to the whole image.
pub fn localize(image: &GrayImage, heatmap: &Heatmap, config: &LocalizationConfig, side: u32) -> Result<Localized> {
    let (w, h) = image.dimensions();
    let (h, w) = (h as usize, w as usize);
    let (bbox, whole_image) = match extract_bbox(heatmap, config.fraction, config.rule) {
        Ok(b) => (b.rescale(heatmap.dim(), (h, w)), false),
        Err(Error::EmptyHeatmap) => (BoundingBox::full(h, w), true),
        Err(e) => return Err(e),
    };
    let cb = crop_box(&bbox, config.padding, h, w)?;
    let crop = crop_roi(image, &bbox, config.padding, side)?;
    Ok(Localized {
        bbox,
        crop_box: cb,
        crop,
        whole_image,
    })
}

fn sentences(report: TokenizedReport, tag: &SentenceTag) -> Vec<ReportSentence> {
    report
        .sentences
        .into_iter()
        .filter(|s| !s.is_empty())
        .map(|s| ReportSentence::new(s, tag.clone(), true))
        .collect()
}

fn fallback(tokens: &str, tag: SentenceTag) -> ReportSentence {
    ReportSentence::new(tokens.split(' ').map(String::from).collect(), tag, false)
}

/// Runs the classifier (once per cache) and interprets at `config.threshold`.
pub fn interpret<C: DiseaseModel, R: ReportModel>(
    image: &GrayImage,
    models: &Models<C, R>,
    config: &PipelineConfig,
) -> Result<InterpretationResult> {
    interpret_cached(image, models, config, &mut InterpretCache::default())
}

pub fn interpret_cached<C: DiseaseModel, R: ReportModel>(
    image: &GrayImage,
    models: &Models<C, R>,
    config: &PipelineConfig,
    cache: &mut InterpretCache,
) -> Result<InterpretationResult> {
    config.validate()?;
    let diseases = models.diseases();
    if cache.scores.is_none() {
        cache.scores = Some(models.classifier.classify(image)?);
    }
    let scores = cache.scores.clone().expect("scores cached above");
    if scores.probabilities.len() != diseases.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} scores", diseases.len()),
            actual: scores.probabilities.len().to_string(),
        });
    }
    let annotation = annotate(&scores, config.threshold)?;
    let reports = &models.reports;
    let routes = plan_routes(diseases, &annotation, reports.train_counts(), reports.min_samples())?;
    for role in routes.roles() {
        if !reports.has(&role) {
            return Err(reports.missing(&role));
        }
    }

    let mut warnings = Vec::new();
    let mut abnormal = Vec::new();
    let mut normality: Vec<ReportSentence> = Vec::new();
    let mut findings = Vec::new();

    if let Some(role) = &routes.normal {
        if cache.normal.is_none() {
            let tag = SentenceTag::Normality { role: role.clone() };
            let mut s = sentences(reports.describe(role, image, config.decoding)?, &tag);
            let mut w = Vec::new();
            if s.is_empty() {
                w.push(format!("decoder `{role}` produced no sentence; used the fallback sentence"));
                s.push(fallback("no acute abnormality is seen", tag));
            }
            cache.normal = Some((s, w));
        }
        let (s, w) = cache.normal.clone().expect("normal report cached above");
        normality = s;
        warnings.extend(w);
    } else {
        let todo: Vec<usize> = annotation
            .present
            .iter()
            .copied()
            .filter(|m| !cache.diseases.contains_key(m))
            .collect();
        if !todo.is_empty() {
            let maps = models.classifier.heatmaps(image, &todo)?;
            if maps.len() != todo.len() {
                return Err(Error::Internal(format!("{} heatmaps for {} diseases", maps.len(), todo.len())));
            }
            for (&m, heatmap) in todo.iter().zip(maps) {
                let choice = routes
                    .diseases
                    .iter()
                    .find(|c| c.disease == m)
                    .cloned()
                    .expect("every present disease is routed");
                let work = disease_work(image, m, &scores, heatmap, choice, models, config)?;
                cache.diseases.insert(m, work);
            }
        }
        let mut order = annotation.present.clone();
        order.sort_by(|&a, &b| scores.probabilities[b].total_cmp(&scores.probabilities[a]).then(a.cmp(&b)));
        for m in order {
            let mut work = cache.diseases[&m].clone();
            // The route depends on the registry only, but refresh it so the
            // result always reflects the current plan.
            if let Some(c) = routes.diseases.iter().find(|c| c.disease == m) {
                work.finding.route = c.clone();
            }
            abnormal.extend(work.abnormal);
            normality.extend(work.normality);
            warnings.extend(work.warnings);
            findings.push(work.finding);
        }
    }

    let mut seen = BTreeSet::new();
    normality.retain(|s| seen.insert(s.tokens.clone()));
    let mut report = Report { sentences: abnormal };
    report.sentences.extend(normality);

    let provenance = Provenance {
        config: config.clone(),
        config_hash: json_digest(config)?,
        model_hashes: models.hashes().clone(),
        threshold: config.threshold,
        timestamp: chrono::Utc::now().to_rfc3339(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        warnings,
        run: None,
    };
    Ok(InterpretationResult {
        annotation: summary(diseases, &scores, &annotation, config.threshold),
        findings,
        report,
        provenance,
    })
}

fn summary(diseases: &[String], scores: &ClassifierOutput, a: &DiseaseAnnotation, tau: f64) -> AnnotationSummary {
    AnnotationSummary {
        diseases: diseases.to_vec(),
        logits: scores.logits.clone(),
        probabilities: scores.probabilities.clone(),
        threshold: tau,
        present: a.present.iter().map(|&m| diseases[m].clone()).collect(),
        is_normal: a.is_normal,
    }
}

fn disease_work<C: DiseaseModel, R: ReportModel>(
    image: &GrayImage,
    m: usize,
    scores: &ClassifierOutput,
    heatmap: Heatmap,
    route: DecoderChoice,
    models: &Models<C, R>,
    config: &PipelineConfig,
) -> Result<DiseaseWork> {
    let name = models.diseases()[m].clone();
    let reports = &models.reports;
    let mut warnings = Vec::new();
    let loc = localize(image, &heatmap, &config.localization, reports.crop_side())?;
    if loc.whole_image {
        warnings.push(format!("{name}: heatmap is empty; the whole image was used as the crop"));
    }
    if route.shared {
        warnings.push(format!("{name}: rare class routed to the shared decoder"));
    }

    let tag = SentenceTag::Abnormality {
        disease: name.clone(),
        role: route.abnormal.clone(),
    };
    let mut abnormal = sentences(reports.describe(&route.abnormal, &loc.crop, config.decoding)?, &tag);
    if abnormal.is_empty() {
        warnings.push(format!(
            "{name}: decoder `{}` produced no sentence; used the fallback sentence",
            route.abnormal
        ));
        abnormal.push(fallback(&format!("findings suggest {}", name.to_lowercase()), tag));
    }
    let tag = SentenceTag::Normality {
        role: route.normality.clone(),
    };
    let normality = sentences(reports.describe(&route.normality, image, config.decoding)?, &tag);

    Ok(DiseaseWork {
        finding: Finding {
            disease: name,
            index: m,
            probability: scores.probabilities[m],
            bbox: loc.bbox,
            crop_box: loc.crop_box,
            whole_image: loc.whole_image,
            route,
            artifacts: BTreeMap::new(),
            visuals: Some(Visuals {
                heatmap,
                crop: loc.crop,
            }),
        },
        abnormal,
        normality,
        warnings,
    })
}

#[cfg(test)]
pub(crate) mod stub {
    //! Models with scripted outputs for composition tests.
    use super::*;
    use crate::classifier::sigmoid;
    use ndarray::Array2;
    use std::cell::Cell;

    pub struct StubClassifier {
        pub diseases: Vec<String>,
        pub probabilities: Vec<f64>,
        /// Hot pixel per disease on a 16×16 heatmap; `None` gives a zero map.
        pub hot: Vec<Option<(usize, usize)>>,
        pub classify_calls: Cell<usize>,
        pub heatmap_calls: Cell<usize>,
    }

    impl StubClassifier {
        pub fn new(probabilities: Vec<f64>) -> Self {
            let k = probabilities.len();
            StubClassifier {
                diseases: (0..k).map(|i| format!("D{i}")).collect(),
                probabilities,
                hot: (0..k).map(|i| Some((i % 16, (3 * i) % 16))).collect(),
                classify_calls: Cell::new(0),
                heatmap_calls: Cell::new(0),
            }
        }
    }

    impl DiseaseModel for StubClassifier {
        fn diseases(&self) -> &[String] {
            &self.diseases
        }

        fn classify(&self, _: &GrayImage) -> Result<ClassifierOutput> {
            self.classify_calls.set(self.classify_calls.get() + 1);
            let logits = self.probabilities.iter().map(|&p| (p / (1.0 - p)).ln()).collect::<Vec<_>>();
            debug_assert!(logits.iter().zip(&self.probabilities).all(|(&z, &p)| (sigmoid(z) - p).abs() < 1e-9));
            Ok(ClassifierOutput {
                logits,
                probabilities: self.probabilities.clone(),
            })
        }

        fn heatmaps(&self, _: &GrayImage, diseases: &[usize]) -> Result<Vec<Heatmap>> {
            self.heatmap_calls.set(self.heatmap_calls.get() + diseases.len());
            Ok(diseases
                .iter()
                .map(|&m| {
                    let mut g = Array2::zeros((16, 16));
                    if let Some((r, c)) = self.hot[m] {
                        g[[r, c]] = 1.0;
                    }
                    Heatmap::new(g)
                })
                .collect())
        }

        fn digest(&self) -> String {
            "stub-classifier".into()
        }
    }

    /// Emits `<role> says <n>` style text, one sentence per call, with the
    /// same sentence for every normality role so dedup is observable.
    pub struct StubReports {
        pub diseases: Vec<String>,
        pub train_counts: Vec<usize>,
        pub missing: Option<DecoderRole>,
        pub silent: bool,
        pub calls: Cell<usize>,
    }

    impl StubReports {
        pub fn new(diseases: Vec<String>) -> Self {
            let n = diseases.len();
            StubReports {
                diseases,
                train_counts: vec![100; n],
                missing: None,
                silent: false,
                calls: Cell::new(0),
            }
        }
    }

    impl ReportModel for StubReports {
        fn diseases(&self) -> &[String] {
            &self.diseases
        }
        fn train_counts(&self) -> &[usize] {
            &self.train_counts
        }
        fn min_samples(&self) -> usize {
            50
        }
        fn has(&self, role: &DecoderRole) -> bool {
            self.missing.as_ref() != Some(role)
        }
        fn missing(&self, role: &DecoderRole) -> Error {
            Error::MissingArtifact {
                role: role.to_string(),
                path: role.file_name().into(),
            }
        }
        fn crop_side(&self) -> u32 {
            8
        }
        fn describe(&self, role: &DecoderRole, _: &GrayImage, _: Decoding) -> Result<TokenizedReport> {
            self.calls.set(self.calls.get() + 1);
            if self.silent {
                return Ok(TokenizedReport::default());
            }
            let words = match role {
                DecoderRole::Normality(_) | DecoderRole::Normal => vec!["lungs".into(), "clear".into()],
                other => vec![other.to_string().to_lowercase(), "seen".into()],
            };
            Ok(TokenizedReport::new(vec![words]))
        }
        fn digests(&self) -> BTreeMap<String, String> {
            BTreeMap::from([("decoders".to_string(), "stub".to_string())])
        }
    }

    pub fn image() -> GrayImage {
        GrayImage::from_pixel(32, 32, image::Luma([90]))
    }
}

#[cfg(test)]
mod tests {
    use super::stub::*;
    use super::*;
    use proptest::prelude::*;

    fn models(p: Vec<f64>) -> Models<StubClassifier, StubReports> {
        let c = StubClassifier::new(p);
        let r = StubReports::new(c.diseases.clone());
        Models::new(c, r).unwrap()
    }

    fn run(m: &Models<StubClassifier, StubReports>, tau: f64) -> InterpretationResult {
        interpret(
            &image(),
            m,
            &PipelineConfig {
                threshold: tau,
                ..PipelineConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn normal_study_is_normality_only() {
        let m = models(vec![0.1, 0.2, 0.3]);
        let r = run(&m, 0.8);
        assert!(r.is_normal() && r.findings.is_empty());
        assert!(r.report.abnormal_diseases().is_empty());
        assert_eq!(r.report.text(), "lungs clear.");
        assert!(matches!(&r.report.sentences[0].tag, SentenceTag::Normality { role: DecoderRole::Normal }));
    }

    #[test]
    fn single_disease_gets_box_crop_and_sentences() {
        let m = models(vec![0.1, 0.95, 0.3]);
        let r = run(&m, 0.8);
        assert_eq!(r.annotation.present, vec!["D1"]);
        assert_eq!(r.findings.len(), 1);
        let f = &r.findings[0];
        // hot pixel (1, 3) on 16×16 maps onto rows 2..=3, cols 6..=7 of 32×32
        assert_eq!((f.bbox.row_min, f.bbox.row_max, f.bbox.col_min, f.bbox.col_max), (2, 3, 6, 7));
        assert_eq!(f.visuals.as_ref().unwrap().crop.dimensions(), (8, 8));
        assert_eq!(r.report.text(), "d1-abnormal seen. lungs clear.");
    }

    #[test]
    fn two_diseases_ordered_by_probability_with_deduped_normality() {
        let m = models(vec![0.85, 0.1, 0.97]);
        let r = run(&m, 0.8);
        let order: Vec<_> = r.findings.iter().map(|f| f.disease.as_str()).collect();
        assert_eq!(order, ["D2", "D0"]);
        assert_eq!(r.report.text(), "d2-abnormal seen. d0-abnormal seen. lungs clear.");
        let tags: Vec<bool> = r
            .report
            .sentences
            .iter()
            .map(|s| matches!(s.tag, SentenceTag::Abnormality { .. }))
            .collect();
        assert_eq!(tags, [true, true, false]);
    }

    #[test]
    fn rare_class_uses_shared_decoder_and_warns() {
        let mut m = models(vec![0.9, 0.1]);
        m.reports.train_counts = vec![10, 100];
        let r = run(&m, 0.8);
        assert!(r.findings[0].route.shared);
        assert_eq!(r.report.sentences[0].text, "shared seen.");
        assert!(r.provenance.warnings.iter().any(|w| w.contains("shared")));
    }

    #[test]
    fn zero_heatmap_falls_back_to_whole_image() {
        let mut m = models(vec![0.9]);
        m.classifier.hot[0] = None;
        let r = run(&m, 0.8);
        assert!(r.findings[0].whole_image);
        assert_eq!(r.findings[0].bbox, BoundingBox::full(32, 32));
        assert!(r.provenance.warnings.iter().any(|w| w.contains("whole image")));
    }

    #[test]
    fn silent_decoder_gets_fallback_sentence() {
        let mut m = models(vec![0.9]);
        m.reports.silent = true;
        let r = run(&m, 0.8);
        assert_eq!(r.report.text(), "findings suggest d0.");
        assert!(!r.report.sentences[0].generated);
        assert_eq!(r.report.abnormal_diseases(), BTreeSet::from(["D0".to_string()]));
    }

    #[test]
    fn missing_decoder_is_named() {
        let mut m = models(vec![0.9, 0.1]);
        m.reports.missing = Some(DecoderRole::Abnormal("D0".into()));
        let err = interpret(&image(), &m, &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { ref role, .. } if role == "D0-abnormal"), "{err}");
    }

    #[test]
    fn cache_reuses_scores_and_disease_work() {
        let m = models(vec![0.5, 0.9, 0.4]);
        let mut cache = InterpretCache::default();
        let cfg = |t| PipelineConfig {
            threshold: t,
            ..PipelineConfig::default()
        };
        interpret_cached(&image(), &m, &cfg(0.8), &mut cache).unwrap();
        interpret_cached(&image(), &m, &cfg(0.8), &mut cache).unwrap();
        assert_eq!(m.classifier.classify_calls.get(), 1);
        assert_eq!(m.classifier.heatmap_calls.get(), 1);
        let r = interpret_cached(&image(), &m, &cfg(0.3), &mut cache).unwrap();
        // only the two newly present diseases are localized
        assert_eq!(m.classifier.heatmap_calls.get(), 3);
        assert_eq!(r.findings.len(), 3);
    }

    #[test]
    fn result_round_trips_and_writes_artifacts() {
        let m = models(vec![0.9, 0.1]);
        let mut r = run(&m, 0.8);
        let dir = tempfile::tempdir().unwrap();
        let path = r.write(dir.path(), &image()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        for key in ["config", "config_hash", "model_hashes", "threshold", "timestamp", "warnings"] {
            assert!(v["provenance"].get(key).is_some(), "{key}");
        }
        assert_eq!(v["provenance"]["model_hashes"]["classifier"], "stub-classifier");
        let arts = &v["findings"][0]["artifacts"];
        for key in ["overlay", "crop", "heatmap"] {
            assert!(dir.path().join(arts[key].as_str().unwrap()).exists());
        }
        let back: InterpretationResult = serde_json::from_value(v).unwrap();
        assert_eq!(back.report, r.report);
    }

    #[test]
    fn rejects_bad_threshold() {
        let m = models(vec![0.9]);
        for t in [0.0, 1.0, 1.5] {
            let cfg = PipelineConfig {
                threshold: t,
                ..PipelineConfig::default()
            };
            assert!(interpret(&image(), &m, &cfg).is_err());
        }
    }

    proptest! {
        #[test]
        fn abnormality_tags_equal_annotation(p in prop::collection::vec(0.01f64..0.99, 1..6), tau in 0.05f64..0.95) {
            let m = models(p.clone());
            let r = run(&m, tau);
            let expected: BTreeSet<String> = p.iter().enumerate()
                .filter(|(_, &v)| v > tau).map(|(i, _)| format!("D{i}")).collect();
            prop_assert_eq!(r.report.abnormal_diseases(), expected.clone());
            let with_maps: BTreeSet<String> = r.findings.iter().map(|f| f.disease.clone()).collect();
            prop_assert_eq!(with_maps, expected);
        }

        #[test]
        fn raising_threshold_never_adds_findings(p in prop::collection::vec(0.01f64..0.99, 1..6)) {
            let m = models(p);
            let mut prev: Option<BTreeSet<String>> = None;
            for tau in [0.3, 0.5, 0.8, 0.95] {
                let cur = run(&m, tau).report.abnormal_diseases();
                if let Some(prev) = &prev {
                    prop_assert!(cur.is_subset(prev));
                }
                prev = Some(cur);
            }
        }
    }
}
