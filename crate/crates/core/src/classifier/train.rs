use ndarray::{Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{auroc_per_class, bce_loss, mean_auroc, score_matrix, ClassifierConfig, DiseaseClassifier};
use crate::corpus::Study;
use crate::error::{Error, Result};
use crate::imaging;
use crate::nn::{Adam, Graph, Tensor};
use crate::training::{batches, EarlyStopping, Progress};

/// A preprocessed `1 × C × S × S` image with its label vector.
#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub image: Tensor,
    pub labels: Vec<u8>,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auroc: Option<f64>,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedClassifier {
    /// Weights from the best validation epoch.
    pub model: DiseaseClassifier,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainedClassifier {
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

/// Loads and preprocesses the images of labelled studies.
pub fn load_labeled(studies: &[Study], config: &ClassifierConfig) -> Result<Vec<LabeledImage>> {
    studies
        .iter()
        .map(|s| {
            let img = imaging::load_gray(&s.image_path)?;
            Ok(LabeledImage {
                image: imaging::to_tensor(&img, config.input_size, &config.normalization),
                labels: s.labels.clone(),
            })
        })
        .collect()
}

fn batch_tensor(data: &[LabeledImage], idx: &[usize]) -> (Tensor, Tensor) {
    let images: Vec<&Tensor> = idx.iter().map(|&i| &data[i].image).collect();
    let m = data[idx[0]].labels.len();
    let targets = ArrayD::from_shape_fn(IxDyn(&[idx.len(), m]), |d| data[idx[d[0]]].labels[d[1]] as f64);
    (imaging::stack(&images), targets)
}

/// Scores and labels of a dataset as `N × M` matrices.
pub(crate) fn evaluate(model: &DiseaseClassifier, data: &[LabeledImage]) -> Result<(Array2<f64>, Array2<u8>, f64)> {
    let mut outputs = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(32) {
        let (x, _) = batch_tensor(data, chunk);
        outputs.extend(model.classify_batch(&x)?);
    }
    let mut loss = 0.0;
    for (o, d) in outputs.iter().zip(data) {
        loss += bce_loss(o, &d.labels)?;
    }
    let m = model.num_classes();
    let labels = Array2::from_shape_fn((data.len(), m), |(i, j)| data[i].labels[j]);
    Ok((score_matrix(&outputs), labels, loss / data.len() as f64))
}

fn check_data(name: &str, data: &[LabeledImage], model: &DiseaseClassifier) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus(format!("{name} split is empty")));
    }
    let s = model.config().input_size as usize;
    let shape = [1, model.channels(), s, s];
    for d in data {
        if d.image.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: format!("{shape:?}"),
                actual: format!("{:?}", d.image.shape()),
            });
        }
        if d.labels.len() != model.num_classes() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", model.num_classes()),
                actual: d.labels.len().to_string(),
            });
        }
    }
    Ok(())
}

/// Minimizes mean summed BCE with Adam, keeping the weights of the epoch
/// with the best validation mean AUROC (ties broken by lower validation
/// loss).
pub fn train_classifier(
    train: &[LabeledImage],
    val: &[LabeledImage],
    config: &ClassifierConfig,
    diseases: &[String],
) -> Result<TrainedClassifier> {
    let mut model = DiseaseClassifier::new(config.clone(), diseases.to_vec())?;
    check_data("training", train, &model)?;
    check_data("validation", val, &model)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = Adam::new(config.optimizer);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.params().clone();
    let mut log = Vec::new();

    for epoch in 1..=config.max_epochs {
        let mut total = 0.0;
        for (b, idx) in batches(train.len(), config.batch_size, &mut rng).iter().enumerate() {
            let (x, targets) = batch_tensor(train, idx);
            let mut g = Graph::new();
            let input = g.input(x);
            let (_, logits) = model.forward(&mut g, input);
            let summed = g.bce_with_logits(logits, &targets);
            let loss = g.scale(summed, 1.0 / idx.len() as f64);
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("loss {value} at batch {b}"),
                });
            }
            total += g.scalar(summed);
            let grads = g.backward(loss).params(&g);
            drop(g);
            adam.step(model.params_mut(), &grads);
        }

        let (scores, labels, val_loss) = evaluate(&model, val)?;
        let val_auroc = mean_auroc(&auroc_per_class(scores.view(), labels.view()));
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("validation loss {val_loss}"),
            });
        }
        log.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_auroc,
            val_loss,
        });
        let progress = stopper.observe(epoch, val_auroc.unwrap_or(f64::NEG_INFINITY), -val_loss);
        if progress == Progress::Improved {
            best = model.params().clone();
        }
        log::debug!("classifier epoch {epoch}: {:?}", log.last());
        if progress == Progress::Stop {
            break;
        }
    }
    model.params_mut().load_from(&best)?;
    Ok(TrainedClassifier {
        model,
        log,
        best_epoch: stopper.best_epoch(),
    })
}
