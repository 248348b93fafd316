use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{interpret_cached, DiseaseModel, InterpretCache, Models, PipelineConfig, ReportModel};
use crate::checkpoint::json_digest;
use crate::classifier::{auroc_per_class, mean_auroc};
use crate::corpus::Study;
use crate::error::{Error, Result};
use crate::imaging::load_gray;
use crate::metrics::{evaluate, MetricScores, Tokens};

/// The evaluation file: caption metrics at the top level plus per-class
/// AUROC (`null` where a class has only one label value in the test set).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(flatten)]
    pub metrics: MetricScores,
    pub auroc: BTreeMap<String, Option<f64>>,
    pub mean_auroc: Option<f64>,
    pub n_studies: usize,
    pub config_hash: String,
    pub model_hashes: BTreeMap<String, String>,
}

/// Interprets every test study and scores generated against reference
/// reports. Studies must carry their label vectors.
pub fn evaluate_pipeline<C: DiseaseModel, R: ReportModel>(
    test: &[Study],
    models: &Models<C, R>,
    config: &PipelineConfig,
) -> Result<EvaluationReport> {
    if test.is_empty() {
        return Err(Error::EmptyCorpus("test set is empty".into()));
    }
    let diseases = models.diseases();
    let k = diseases.len();
    let mut scores = Array2::<f64>::zeros((test.len(), k));
    let mut labels = Array2::<u8>::zeros((test.len(), k));
    let mut candidates: Vec<Tokens> = Vec::with_capacity(test.len());
    let mut references: Vec<Vec<Tokens>> = Vec::with_capacity(test.len());
    for (i, study) in test.iter().enumerate() {
        if study.labels.len() != k {
            return Err(Error::InvalidInput(format!(
                "study `{}` has {} labels, expected {k}; prepare the dataset first",
                study.patient_id,
                study.labels.len()
            )));
        }
        let image = load_gray(&study.image_path)?;
        let mut cache = InterpretCache::default();
        let result = interpret_cached(&image, models, config, &mut cache)?;
        let probs = &cache.scores().expect("interpret fills the cache").probabilities;
        for m in 0..k {
            scores[[i, m]] = probs[m];
            labels[[i, m]] = study.labels[m];
        }
        candidates.push(result.report.tokenized().flat());
        references.push(vec![study.report().flat()]);
    }
    let per_class = auroc_per_class(scores.view(), labels.view());
    Ok(EvaluationReport {
        metrics: evaluate(&candidates, &references)?,
        mean_auroc: mean_auroc(&per_class),
        auroc: diseases.iter().cloned().zip(per_class).collect(),
        n_studies: test.len(),
        config_hash: json_digest(config)?,
        model_hashes: models.hashes().clone(),
    })
}
