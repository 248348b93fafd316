use std::path::Path;

use anyhow::{bail, Context};
use serde_json::{json, Value};

use cxr::captioner::{train_decoder, DecoderRegistry, DecoderRole, ImageEncoder};
use cxr::checkpoint::file_digest;
use cxr::classifier::{load_labeled, train_classifier as fit_classifier, DiseaseClassifier};
use cxr::corpus::{
    check_one_study_per_patient, filter_studies, label_counts, read_manifest, split_dataset, write_manifest, LabelConfig,
    Study, TokenizedReport, Vocabulary,
};
use cxr::imaging::load_gray;
use cxr::pipeline::{
    classifier_path, decoder_pairs, evaluate_pipeline, interpret as run_pipeline, registry_path, LoadedModels,
};
use cxr::synth::write_dataset;

use crate::config::RunConfig;

const TRAIN: &str = "train.jsonl";
const VAL: &str = "val.jsonl";
const TEST: &str = "test.jsonl";
const VOCAB: &str = "vocab.json";
const LABELS: &str = "labels.json";

/// Provenance block written into every artifact.
fn provenance(run: &RunConfig, extra: Value) -> Value {
    let mut p = json!({
        "run": run.to_json(),
        "command": std::env::args().collect::<Vec<_>>(),
        "timestamp": chrono::Utc::now().to_rfc3339(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    if let (Some(p), Value::Object(extra)) = (p.as_object_mut(), extra) {
        p.extend(extra);
    }
    p
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(run: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let manifest = write_dataset(out, &run.synth)?;
    write_json(
        &out.join("synth.json"),
        &json!({ "manifest": manifest, "provenance": provenance(run, json!({})) }),
    )?;
    log::info!("{} synthetic studies in {}", run.synth.n_studies, out.display());
    println!("{}", manifest.display());
    Ok(())
}

pub fn prepare(run: &RunConfig, manifest: &Path) -> anyhow::Result<()> {
    let mut raw = read_manifest(manifest)?;
    check_one_study_per_patient(&raw)?;
    // the split manifests live elsewhere, so pin image paths down
    for s in &mut raw {
        s.image_path = std::path::absolute(&s.image_path)
            .with_context(|| format!("resolving {}", s.image_path.display()))?;
    }
    let kept = filter_studies(&raw, &run.labels)?;
    if kept.len() < raw.len() {
        log::info!("dropped {} studies without a normal or target-disease term", raw.len() - kept.len());
    }
    let split = split_dataset(&kept, &run.split)?;
    let out = &run.data;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, part) in [(TRAIN, &split.train), (VAL, &split.val), (TEST, &split.test)] {
        write_manifest(&out.join(name), part, None)?;
    }
    let reports: Vec<TokenizedReport> = split.train.iter().map(Study::report).collect();
    let vocab = Vocabulary::build(&reports)?;
    write_text(&out.join(VOCAB), &vocab.to_json()?)?;
    write_json(&out.join(LABELS), &run.labels)?;
    let k = run.labels.diseases.len();
    let counts = |s: &[Study]| -> Value {
        run.labels
            .diseases
            .iter()
            .cloned()
            .zip(label_counts(s, k))
            .map(|(d, n)| (d, json!(n)))
            .collect::<serde_json::Map<_, _>>()
            .into()
    };
    write_json(
        &out.join("prepare.json"),
        &json!({
            "input": manifest,
            "input_sha256": file_digest(manifest)?,
            "studies": { "input": raw.len(), "kept": kept.len() },
            "sizes": { "train": split.train.len(), "val": split.val.len(), "test": split.test.len() },
            "label_counts": { "train": counts(&split.train), "val": counts(&split.val), "test": counts(&split.test) },
            "vocab": { "size": vocab.len(), "hash": vocab.hash() },
            "provenance": provenance(run, json!({})),
        }),
    )?;
    log::info!(
        "split {} / {} / {} studies, vocabulary of {}",
        split.train.len(),
        split.val.len(),
        split.test.len(),
        vocab.len()
    );
    println!("{}", out.display());
    Ok(())
}

/// A prepared dataset: the label set and vocabulary it was built with.
struct Prepared {
    labels: LabelConfig,
    vocab: Vocabulary,
    train: Vec<Study>,
    val: Vec<Study>,
}

fn load_prepared(dir: &Path) -> anyhow::Result<Prepared> {
    let labels_path = dir.join(LABELS);
    if !labels_path.exists() {
        bail!("{} is not a prepared dataset (no {LABELS}); run `cxr prepare` first", dir.display());
    }
    let labels: LabelConfig = serde_json::from_str(
        &std::fs::read_to_string(&labels_path).with_context(|| format!("reading {}", labels_path.display()))?,
    )
    .with_context(|| format!("parsing {}", labels_path.display()))?;
    let vocab_path = dir.join(VOCAB);
    let vocab = Vocabulary::from_json(
        &std::fs::read_to_string(&vocab_path).with_context(|| format!("reading {}", vocab_path.display()))?,
    )?;
    Ok(Prepared {
        labels,
        vocab,
        train: read_manifest(&dir.join(TRAIN))?,
        val: read_manifest(&dir.join(VAL))?,
    })
}

fn check_labels(run: &RunConfig, prepared: &Prepared) {
    if run.labels.diseases != prepared.labels.diseases {
        log::warn!(
            "configured diseases {:?} differ from the prepared dataset's {:?}; using the dataset's",
            run.labels.diseases,
            prepared.labels.diseases
        );
    }
}

pub fn train_classifier(run: &RunConfig) -> anyhow::Result<()> {
    let data = load_prepared(&run.data)?;
    check_labels(run, &data);
    let config = &run.classifier;
    let train = load_labeled(&data.train, config)?;
    let mut val = load_labeled(&data.val, config)?;
    if val.is_empty() {
        log::warn!("validation split is empty; early stopping watches the training set");
        val = train.clone();
    }
    log::info!("training classifier on {} images ({} validation)", train.len(), val.len());
    let trained = fit_classifier(&train, &val, config, &data.labels.diseases)?;
    std::fs::create_dir_all(&run.models).with_context(|| format!("creating {}", run.models.display()))?;
    let path = classifier_path(&run.models);
    let best = trained.log.iter().find(|e| e.epoch == trained.best_epoch).cloned();
    trained.model.save(
        &path,
        json!({
            "best_epoch": trained.best_epoch,
            "epochs": trained.log.len(),
            "best": best,
            "provenance": provenance(run, json!({ "data": run.data })),
        }),
    )?;
    write_text(&run.models.join("classifier.log.jsonl"), &trained.log_jsonl())?;
    log::info!(
        "best epoch {} of {}; wrote {}",
        trained.best_epoch,
        trained.log.len(),
        path.display()
    );
    println!("{}", path.display());
    Ok(())
}

/// Every role name valid for a disease list.
fn all_roles(diseases: &[String]) -> Vec<DecoderRole> {
    let mut roles = vec![DecoderRole::Normal, DecoderRole::Shared];
    for d in diseases {
        roles.push(DecoderRole::Abnormal(d.clone()));
        roles.push(DecoderRole::Normality(d.clone()));
    }
    roles
}

fn open_or_create_registry(
    run: &RunConfig,
    data: &Prepared,
    classifier: &DiseaseClassifier,
    counts: &[usize],
) -> anyhow::Result<DecoderRegistry> {
    let dir = registry_path(&run.models);
    let mut reg = if dir.join("manifest.json").exists() {
        let reg = DecoderRegistry::open(&dir)?;
        if reg.vocab().hash() != data.vocab.hash() {
            bail!(cxr::Error::ArtifactMismatch(format!(
                "{} was built with a different vocabulary than {}",
                dir.display(),
                run.data.display()
            )));
        }
        if reg.diseases() != classifier.diseases() || reg.train_counts() != counts {
            bail!(cxr::Error::ArtifactMismatch(format!(
                "{} was built for different diseases or training counts; remove it to start over",
                dir.display()
            )));
        }
        reg
    } else {
        let encoder = ImageEncoder::new(run.encoder.clone())?;
        DecoderRegistry::create(&dir, data.vocab.clone(), encoder, classifier.diseases().to_vec(), counts.to_vec())?
    };
    reg.set_min_samples(run.min_samples)?;
    Ok(reg)
}

type LoadedStudy = (image::GrayImage, TokenizedReport, Vec<u8>);

fn load_studies(studies: &[Study]) -> anyhow::Result<Vec<LoadedStudy>> {
    studies
        .iter()
        .map(|s| Ok((load_gray(&s.image_path)?, s.report(), s.labels.clone())))
        .collect()
}

/// Trains one decoder role, or every role the registry's routing needs.
pub fn train_decoders(run: &RunConfig, role: Option<DecoderRole>) -> anyhow::Result<()> {
    let data = load_prepared(&run.data)?;
    check_labels(run, &data);
    if let Some(r) = &role {
        let valid = all_roles(&data.labels.diseases);
        if !valid.contains(r) {
            let names: Vec<String> = valid.iter().map(ToString::to_string).collect();
            bail!(cxr::Error::Config(format!(
                "unknown decoder role `{r}`; valid roles: {}",
                names.join(", ")
            )));
        }
    }
    let ckpt = classifier_path(&run.models);
    if !ckpt.exists() {
        bail!(cxr::Error::MissingArtifact {
            role: "classifier (train it first: --component classifier)".into(),
            path: ckpt,
        });
    }
    let classifier = DiseaseClassifier::load(&ckpt)?;
    if classifier.diseases() != data.labels.diseases {
        bail!(cxr::Error::ArtifactMismatch(format!(
            "classifier diseases {:?} differ from the dataset's {:?}",
            classifier.diseases(),
            data.labels.diseases
        )));
    }
    let counts = label_counts(&data.train, data.labels.diseases.len());
    let mut reg = open_or_create_registry(run, &data, &classifier, &counts)?;
    let roles = match role {
        None => reg.required_roles(),
        Some(r) => vec![r],
    };
    let train = load_studies(&data.train)?;
    let val = load_studies(&data.val)?;
    let dir = registry_path(&run.models);
    for role in roles {
        let pairs = |studies: &[LoadedStudy]| {
            decoder_pairs(
                &role,
                studies,
                &classifier,
                reg.encoder(),
                &data.labels,
                &counts,
                run.min_samples,
                &run.pipeline.localization,
            )
        };
        let tp = pairs(&train)?;
        let vp = pairs(&val)?;
        if tp.is_empty() {
            bail!(cxr::Error::EmptyCorpus(format!("no training pairs for decoder `{role}`")));
        }
        log::info!("training decoder `{role}` on {} pairs ({} validation)", tp.len(), vp.len());
        let trained = train_decoder(&tp, &vp, &data.vocab, &run.decoder)?;
        write_text(&dir.join(format!("{role}.log.jsonl")), &trained.log_jsonl())?;
        let meta = json!({
            "best_epoch": trained.best_epoch,
            "epochs": trained.log.len(),
            "pairs": { "train": tp.len(), "val": vp.len() },
            "provenance": provenance(run, json!({ "data": run.data, "classifier_sha256": file_digest(&ckpt)? })),
        });
        reg.insert(role.clone(), trained.decoder, meta)?;
        log::info!("decoder `{role}`: best epoch {} of {}", trained.best_epoch, trained.log.len());
        println!("{}", reg.path_for(&role).display());
    }
    Ok(())
}

pub fn interpret(run: &RunConfig, image_path: &Path, out: &Path) -> anyhow::Result<()> {
    let models = LoadedModels::open(&run.models)?;
    let image = load_gray(image_path)?;
    let mut result = run_pipeline(&image, &models, &run.pipeline)?;
    result.provenance.run = Some(provenance(run, json!({ "image": image_path })));
    let path = result.write(out, &image)?;
    for w in &result.provenance.warnings {
        log::warn!("{w}");
    }
    if result.is_normal() {
        log::info!("no disease above τ = {}", run.pipeline.threshold);
    } else {
        log::info!("present: {}", result.annotation.present.join(", "));
    }
    println!("{}", path.display());
    Ok(())
}

pub fn evaluate(run: &RunConfig, manifest: &Path, out: &Path) -> anyhow::Result<()> {
    let models = LoadedModels::open(&run.models)?;
    let mut test = read_manifest(manifest)?;
    if test.is_empty() {
        bail!(cxr::Error::EmptyCorpus(format!("{} has no studies", manifest.display())));
    }
    if test.iter().any(|s| s.labels.is_empty()) {
        // a raw manifest: derive labels for the models' disease list
        let labels = LabelConfig {
            diseases: models.diseases().to_vec(),
            ..run.labels.clone()
        };
        test = filter_studies(&test, &labels)?;
    }
    let report = evaluate_pipeline(&test, &models, &run.pipeline)?;
    let mut value = serde_json::to_value(&report)?;
    value["provenance"] = provenance(
        run,
        json!({ "manifest": manifest, "manifest_sha256": file_digest(manifest)? }),
    );
    write_json(out, &value)?;
    let m = &report.metrics;
    log::info!(
        "BLEU-1..4 {:.3} {:.3} {:.3} {:.3}, ROUGE-L {:.3}, CIDEr {:.3}, mean AUROC {}",
        m.bleu[0],
        m.bleu[1],
        m.bleu[2],
        m.bleu[3],
        m.rouge_l,
        m.cider,
        report.mean_auroc.map_or("n/a".into(), |a| format!("{a:.3}"))
    );
    println!("{}", out.display());
    Ok(())
}

pub fn serve(run: &RunConfig) -> anyhow::Result<()> {
    let config = run.service_config();
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(cxr_service::run(config))?;
    Ok(())
}
