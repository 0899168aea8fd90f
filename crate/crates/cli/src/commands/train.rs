use std::fs;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use slidenet::train::{extract_windows, read_dataset, train_classifier, train_detector, train_regressor, EpochStats, TrainConfig};
use slidenet::{ArchKind, ArchSpec};

use super::{load_weights, Arch};
use crate::error::{CliError, CliResult};
use crate::manifest::Outcome;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Classify,
    Regress,
    Detect,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Arch::Toy)]
    pub arch: Arch,
    #[arg(long, value_enum)]
    pub task: Task,
    /// `key = value` overrides on top of the preset for the architecture and task.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for weights, trace and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Trained classifier whose features the regressor or detector builds on.
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// Continue a classifier run from its saved weights and optimiser state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output classes; defaults to one more than the largest label in the data.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Channel divisor of the toy architecture.
    #[arg(long, default_value_t = 16)]
    pub scale_factor: usize,
}

fn preset(kind: ArchKind, task: Task, image_size: usize) -> TrainConfig {
    match (kind, task) {
        (ArchKind::Toy, Task::Classify) => TrainConfig::toy(image_size),
        (ArchKind::Toy, _) => TrainConfig::toy_heads(image_size),
        _ => TrainConfig::default(),
    }
}

fn write_trace(path: &std::path::Path, trace: &[EpochStats]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "split", "loss", "accuracy"])?;
    for s in trace {
        w.write_record([s.epoch.to_string(), s.split.clone(), format!("{:.6}", s.loss), format!("{:.6}", s.accuracy)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(a: &TrainArgs) -> CliResult<Outcome> {
    let samples = read_dataset(&a.data)?;
    let first = samples.first().ok_or_else(|| CliError::Data(format!("{} holds no images", a.data.display())))?;
    let (h, w) = first.size();
    let mut cfg = preset(a.arch.kind(), a.task, h.min(w));
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        cfg = cfg.parse_overrides(&text, path).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    cfg.validate()?;
    let outcome = match a.task {
        Task::Classify => {
            let classes = match a.classes {
                Some(c) => c,
                None => samples.iter().flat_map(|s| s.objects.iter().map(|o| o.0 + 1)).max().unwrap_or(0),
            };
            let factor = if a.arch == Arch::Toy { a.scale_factor } else { 1 };
            let spec = ArchSpec::from_parts(a.arch.kind(), classes, factor)?;
            let resume = a.resume.as_deref().map(load_weights).transpose()?;
            train_classifier(&spec, &samples, &cfg, resume)?
        }
        Task::Regress | Task::Detect => {
            let path = a
                .classifier
                .as_deref()
                .ok_or_else(|| CliError::Usage("--classifier is required for regress and detect".into()))?;
            let classifier = load_weights(path)?;
            let spec = classifier.arch_spec()?;
            if spec.kind != a.arch.kind() {
                return Err(CliError::Usage(format!("--arch {} does not match the {} classifier", a.arch.kind().name(), spec.name())));
            }
            if classifier.header.steps == 0 {
                return Err(slidenet::Error::Precondition("the classifier has never been trained".into()).into());
            }
            let plan = cfg.head_plan(&spec)?;
            let windows = extract_windows(&spec, &classifier, &samples, &plan)?;
            if a.task == Task::Regress {
                train_regressor(&spec, &classifier, &windows, &samples, &cfg)?
            } else {
                train_detector(&spec, &classifier, &windows, &samples, &cfg, cfg.negative_mode)?
            }
        }
    };
    fs::create_dir_all(&a.out)?;
    let weights_path = a.out.join("weights.bin");
    let trace_path = a.out.join("trace.csv");
    outcome.weights.save(&weights_path)?;
    write_trace(&trace_path, &outcome.trace)?;
    let mut o = Outcome {
        arch: Some(a.arch.kind().name().to_string()),
        seed: Some(cfg.seed),
        weights_checksum: Some(outcome.weights.checksum()),
        artifacts: vec![weights_path, trace_path],
        ..Outcome::default()
    };
    o.set("task", format!("{:?}", a.task).to_lowercase());
    o.set("data", a.data.display());
    o.set_config_text(&cfg.to_text());
    Ok(o)
}
