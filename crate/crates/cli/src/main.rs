//! `cxr`: dataset preparation, training, interpretation, evaluation and
//! serving. Exit status is 0 on success, 1 for errors caused by inputs or
//! configuration, 2 for internal failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cxr::captioner::{DecoderRole, Decoding};
use config::{Preset, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "cxr", version, about = "Chest X-ray interpretation: classify, localize, report")]
struct Cli {
    /// TOML configuration file; keys mirror the flags.
    #[arg(long, short, global = true, env = "CXR_CONFIG")]
    config: Option<PathBuf>,
    /// Model-size defaults applied before the config file.
    #[arg(long, global = true, env = "CXR_PRESET", value_enum)]
    preset: Option<Preset>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset: images/*.png and manifest.jsonl.
    Synth {
        out: PathBuf,
        /// Number of studies [synth.n_studies]
        #[arg(long, env = "CXR_SYNTH_STUDIES")]
        studies: Option<usize>,
        /// [synth.seed]
        #[arg(long, env = "CXR_SYNTH_SEED")]
        seed: Option<u64>,
    },
    /// Filter and label a manifest, split it by patient, build the vocabulary.
    Prepare {
        manifest: PathBuf,
        /// Output directory [data]
        #[arg(long, env = "CXR_DATA")]
        out: Option<PathBuf>,
        /// Shuffle seed [split.seed]
        #[arg(long, env = "CXR_SPLIT_SEED")]
        seed: Option<u64>,
        /// train,val,test ratios [split.ratios]
        #[arg(long, env = "CXR_SPLIT_RATIOS", value_delimiter = ',', num_args = 3)]
        ratios: Option<Vec<f64>>,
    },
    /// Train the classifier or decoders on a prepared dataset.
    Train {
        /// classifier, decoder:all or decoder:<role>
        #[arg(long, env = "CXR_COMPONENT", value_parser = parse_component)]
        component: Component,
        /// Prepared dataset directory [data]
        #[arg(long, env = "CXR_DATA")]
        data: Option<PathBuf>,
        #[command(flatten)]
        models: ModelsFlag,
        /// Classes with fewer training reports share a decoder [min_samples]
        #[arg(long, env = "CXR_MIN_SAMPLES")]
        min_samples: Option<usize>,
    },
    /// Interpret one image; writes result.json plus overlay, crop and heatmap files.
    Interpret {
        image: PathBuf,
        #[command(flatten)]
        models: ModelsFlag,
        #[arg(long, env = "CXR_OUT", default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
    /// Interpret every study of a manifest and score the reports.
    Evaluate {
        manifest: PathBuf,
        #[command(flatten)]
        models: ModelsFlag,
        /// Evaluation JSON to write.
        #[arg(long, env = "CXR_EVAL_OUT", default_value = "evaluation.json")]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
    /// Run the HTTP review service.
    Serve {
        #[command(flatten)]
        models: ModelsFlag,
        #[command(flatten)]
        serve: ServeFlags,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
    /// Print the resolved configuration as TOML.
    Config {
        #[command(flatten)]
        models: ModelsFlag,
        #[command(flatten)]
        serve: ServeFlags,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
}

#[derive(Clone, Debug, PartialEq)]
enum Component {
    Classifier,
    AllDecoders,
    Decoder(DecoderRole),
}

fn parse_component(s: &str) -> Result<Component, String> {
    match s {
        "classifier" => Ok(Component::Classifier),
        "decoder:all" => Ok(Component::AllDecoders),
        _ => match s.strip_prefix("decoder:") {
            Some(role) => role.parse().map(Component::Decoder).map_err(|e| e.to_string()),
            None => Err("expected classifier, decoder:all or decoder:<role>".into()),
        },
    }
}

#[derive(Args, Debug)]
struct ModelsFlag {
    /// Model directory [models]
    #[arg(long, env = "CXR_MODELS")]
    models: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Greedy,
    Sample,
}

#[derive(Args, Debug)]
struct PipelineFlags {
    /// Annotation threshold τ in (0, 1) [pipeline.threshold]
    #[arg(long, env = "CXR_THRESHOLD")]
    threshold: Option<f64>,
    /// Decoding strategy [pipeline.decoding.mode]
    #[arg(long, env = "CXR_MODE", value_enum)]
    mode: Option<Mode>,
    /// Sampling seed, used with --mode sample [pipeline.decoding.seed]
    #[arg(long, env = "CXR_SAMPLE_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ServeFlags {
    /// [service.host]
    #[arg(long, env = "CXR_HOST")]
    host: Option<String>,
    /// [service.port]
    #[arg(long, env = "CXR_PORT")]
    port: Option<u16>,
    /// SQLite file [service.storage]
    #[arg(long, env = "CXR_STORAGE")]
    storage: Option<PathBuf>,
    /// Interpret uploads in the background [service.queue]
    #[arg(long, env = "CXR_QUEUE")]
    queue: Option<bool>,
}

impl ModelsFlag {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(m) = &self.models {
            c.models = m.clone();
        }
    }
}

impl PipelineFlags {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(t) = self.threshold {
            c.pipeline.threshold = t;
        }
        let seed = self.seed.or(match c.pipeline.decoding {
            Decoding::Sample { seed } => Some(seed),
            Decoding::Greedy => None,
        });
        match self.mode {
            Some(Mode::Greedy) => c.pipeline.decoding = Decoding::Greedy,
            Some(Mode::Sample) => c.pipeline.decoding = Decoding::Sample { seed: seed.unwrap_or(0) },
            None => {
                if let (Decoding::Sample { .. }, Some(seed)) = (c.pipeline.decoding, self.seed) {
                    c.pipeline.decoding = Decoding::Sample { seed };
                }
            }
        }
    }
}

impl ServeFlags {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(h) = &self.host {
            c.service.host = h.clone();
        }
        if let Some(p) = self.port {
            c.service.port = p;
        }
        if let Some(s) = &self.storage {
            c.service.storage = s.clone();
        }
        if let Some(q) = self.queue {
            c.service.queue = q;
        }
    }
}

/// Loads the file, applies this command's flags and re-validates.
fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut c = RunConfig::load(cli.config.as_deref(), cli.preset)?;
    match &cli.command {
        Command::Synth { studies, seed, .. } => {
            if let Some(n) = studies {
                c.synth.n_studies = *n;
            }
            if let Some(s) = seed {
                c.synth.seed = *s;
            }
            c.synth.validate()?;
        }
        Command::Prepare { out, seed, ratios, .. } => {
            if let Some(o) = out {
                c.data = o.clone();
            }
            if let Some(s) = seed {
                c.split.seed = *s;
            }
            if let Some(r) = ratios {
                c.split.ratios = [r[0], r[1], r[2]];
            }
        }
        Command::Train {
            data,
            models,
            min_samples,
            ..
        } => {
            if let Some(d) = data {
                c.data = d.clone();
            }
            models.apply(&mut c);
            if let Some(m) = min_samples {
                c.min_samples = *m;
            }
        }
        Command::Interpret { models, pipeline, .. } | Command::Evaluate { models, pipeline, .. } => {
            models.apply(&mut c);
            pipeline.apply(&mut c);
        }
        Command::Serve {
            models,
            serve,
            pipeline,
        }
        | Command::Config {
            models,
            serve,
            pipeline,
        } => {
            models.apply(&mut c);
            serve.apply(&mut c);
            pipeline.apply(&mut c);
        }
    }
    c.validate()?;
    Ok(c)
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let run = resolve(&cli)?;
    match cli.command {
        Command::Synth { out, .. } => commands::synth(&run, &out),
        Command::Prepare { manifest, .. } => commands::prepare(&run, &manifest),
        Command::Train { component, .. } => match component {
            Component::Classifier => commands::train_classifier(&run),
            Component::AllDecoders => commands::train_decoders(&run, None),
            Component::Decoder(role) => commands::train_decoders(&run, Some(role)),
        },
        Command::Interpret { image, out, .. } => commands::interpret(&run, &image, &out),
        Command::Evaluate { manifest, out, .. } => commands::evaluate(&run, &manifest, &out),
        Command::Serve { .. } => commands::serve(&run),
        Command::Config { .. } => {
            print!("{}", toml::to_string_pretty(&run)?);
            Ok(())
        }
    }
}

/// 1 unless some error in the chain says the failure was internal.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<cxr::Error>() {
            return if c.is_user_error() { 1 } else { 2 };
        }
        if let Some(s) = cause.downcast_ref::<cxr_service::ServiceError>() {
            return if s.is_user_error() { 1 } else { 2 };
        }
    }
    1
}

/// The error chain joined by `: `, skipping causes a wrapper already
/// spelled out in its own message.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.ends_with(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // help and version go to stdout and are not failures
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    match std::panic::catch_unwind(|| dispatch(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(2),
    }
}
