mod commands;
mod error;
mod manifest;
mod tables;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::{bench, data, eval, infer, inspect, train};
use error::CliError;
use manifest::{Outcome, RunManifest};

/// Dense sliding-window ConvNet: data, training, inference and evaluation.
#[derive(Parser, Debug)]
#[command(name = "slidenet", version)]
struct Cli {
    /// Worker threads; 1 selects the deterministic reference path.
    #[arg(long, global = true, env = "SLIDENET_THREADS")]
    threads: Option<usize>,
    /// Where to write the run manifest (default: next to the command's output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Log progress to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic shapes dataset.
    GenData(data::GenDataArgs),
    /// Train a classifier, box regressor or detector.
    Train(train::TrainArgs),
    /// Rank classes for images over one or more scales.
    Classify(infer::ClassifyArgs),
    /// Predict and merge boxes.
    Localize(infer::LocalizeArgs),
    /// Score prediction records against ground truth.
    Eval(eval::EvalArgs),
    /// Print layer and scale tables, checking them against the published ones.
    Inspect(inspect::InspectArgs),
    /// Compare dense and per-window evaluation cost.
    Bench(bench::BenchArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Classify(_) => "classify",
            Command::Localize(_) => "localize",
            Command::Eval(_) => "eval",
            Command::Inspect(_) => "inspect",
            Command::Bench(_) => "bench",
        }
    }

    /// Default manifest location derived from the command's output.
    fn manifest_path(&self) -> PathBuf {
        let beside = |out: &Path| {
            let mut s = out.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        };
        let fallback = PathBuf::from(format!("slidenet-{}.manifest.json", self.name()));
        match self {
            Command::GenData(a) => a.out.join("manifest.json"),
            Command::Train(a) => a.out.join("manifest.json"),
            Command::Bench(a) => a.out.join("manifest.json"),
            Command::Classify(a) => a.out.as_deref().map_or(fallback, beside),
            Command::Localize(a) => a.out.as_deref().map_or(fallback, beside),
            Command::Eval(a) => a.out.as_deref().map_or(fallback, beside),
            Command::Inspect(a) => a.out.as_deref().map_or(fallback, beside),
        }
    }

    fn run(&self) -> Result<(Outcome, Option<CliError>), CliError> {
        let done = |o: Outcome| (o, None);
        Ok(match self {
            Command::GenData(a) => done(data::run(a)?),
            Command::Train(a) => done(train::run(a)?),
            Command::Classify(a) => done(infer::classify(a)?),
            Command::Localize(a) => done(infer::localize_cmd(a)?),
            Command::Eval(a) => done(eval::run(a)?),
            Command::Inspect(a) => inspect::run(a)?,
            Command::Bench(a) => done(bench::run(a)?),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .init();
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        eprintln!("error: --threads must be positive");
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(2);
    }
    let start = Instant::now();
    let (outcome, failure) = match cli.command.run() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let code = failure.as_ref().map_or(0, CliError::exit_code);
    let path = cli.manifest.clone().unwrap_or_else(|| cli.command.manifest_path());
    let manifest = RunManifest::new(cli.command.name(), outcome, threads, start.elapsed().as_secs_f64(), code);
    if let Err(e) = manifest.write(&path) {
        eprintln!("error: writing manifest {}: {e}", path.display());
        return ExitCode::from(e.exit_code());
    }
    if let Some(e) = failure {
        eprintln!("error: {e}");
    }
    ExitCode::from(code)
}
