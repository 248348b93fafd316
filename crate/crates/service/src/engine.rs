use image::GrayImage;

use cxr::classifier::ClassifierOutput;
use cxr::pipeline::{interpret_cached, DiseaseModel, InterpretCache, InterpretationResult, Models, PipelineConfig, ReportModel};

/// The models behind the service, shared read-only across requests.
pub trait Engine: Send + Sync {
    fn diseases(&self) -> &[String];

    /// Interprets `image`, reusing whatever `cache` already holds.
    fn interpret(
        &self,
        image: &GrayImage,
        config: &PipelineConfig,
        cache: &mut InterpretCache,
    ) -> cxr::Result<InterpretationResult>;
}

impl<C, R> Engine for Models<C, R>
where
    C: DiseaseModel + Send + Sync,
    R: ReportModel + Send + Sync,
{
    fn diseases(&self) -> &[String] {
        Models::diseases(self)
    }

    fn interpret(
        &self,
        image: &GrayImage,
        config: &PipelineConfig,
        cache: &mut InterpretCache,
    ) -> cxr::Result<InterpretationResult> {
        interpret_cached(image, self, config, cache)
    }
}

/// Scores as stored with each study.
pub(crate) fn scores_json(cache: &InterpretCache) -> serde_json::Result<String> {
    serde_json::to_string(cache.scores().expect("interpretation fills the score cache"))
}

pub(crate) fn cache_from_json(text: &str) -> serde_json::Result<InterpretCache> {
    Ok(InterpretCache::with_scores(serde_json::from_str::<ClassifierOutput>(text)?))
}
