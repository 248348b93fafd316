#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use cxr::captioner::{Decoder, DecoderConfig, DecoderRegistry, EncoderConfig, ImageEncoder};
use cxr::classifier::{ClassifierConfig, DiseaseClassifier};
use cxr::corpus::{preprocess_report, Vocabulary};
use cxr::pipeline::{classifier_path, registry_path};

pub const DISEASES: [&str; 3] = ["Cardiomegaly", "Effusion", "Nodule"];

/// The binary with no `CXR_*` variables leaking in from the environment.
pub fn cxr() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cxr"));
    for (k, _) in std::env::vars() {
        if k.starts_with("CXR_") {
            cmd.env_remove(k);
        }
    }
    cmd.env("RUST_LOG", "warn");
    cmd
}

pub fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[track_caller]
pub fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\n{}", o.status.code(), stderr(&o));
    o
}

pub fn read_json(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

/// Untrained tiny models on disk. The classifier's head weights are scaled
/// down so its probabilities sit near sigmoid(`bias`); every decoder the
/// routing needs is present but random.
pub fn random_models(dir: &Path, bias: &[f64]) {
    let diseases: Vec<String> = DISEASES.map(String::from).to_vec();
    let mut clf = DiseaseClassifier::new(ClassifierConfig::tiny(), diseases.clone()).unwrap();
    clf.params_mut().get_mut("head.weight").unwrap().mapv_inplace(|v| v * 1e-3);
    let b = clf.params_mut().get_mut("head.bias").unwrap();
    for (x, v) in b.iter_mut().zip(bias) {
        *x = *v;
    }
    clf.save(&classifier_path(dir), Value::Null).unwrap();
    let reports = vec![preprocess_report("There is cardiomegaly.", "The lungs are clear."); 2];
    let vocab = Vocabulary::build(&reports).unwrap();
    let enc = ImageEncoder::new(EncoderConfig::tiny()).unwrap();
    let dim = enc.dim();
    let mut reg = DecoderRegistry::create(&registry_path(dir), vocab.clone(), enc, diseases, vec![100, 100, 100]).unwrap();
    for (i, role) in reg.required_roles().into_iter().enumerate() {
        let config = DecoderConfig {
            max_len: 8,
            seed: i as u64,
            ..DecoderConfig::tiny()
        };
        reg.insert(role, Decoder::new(config, dim, vocab.len()).unwrap(), Value::Null).unwrap();
    }
}
