use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use slidenet::localize::{evaluate_classification, evaluate_detection_map, evaluate_localization, format_g6, read_records};

use crate::error::CliResult;
use crate::manifest::Outcome;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    /// Top-5 classification error.
    Top5cls,
    /// Top-5 localization error at IOU 0.5.
    Loc,
    /// Mean average precision at IOU 0.5.
    Map,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, value_enum)]
    pub metric: Metric,
    /// CSV with the metric and, for mAP, per-class average precision.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(a: &EvalArgs) -> CliResult<Outcome> {
    let pred = read_records(&a.pred)?;
    let truth = read_records(&a.truth)?;
    let (name, value, per_class) = match a.metric {
        Metric::Top5cls => ("top5cls", evaluate_classification(&pred, &truth)?, Vec::new()),
        Metric::Loc => ("loc", evaluate_localization(&pred, &truth)?, Vec::new()),
        Metric::Map => {
            let r = evaluate_detection_map(&pred, &truth)?;
            ("map", r.map, r.per_class)
        }
    };
    writeln!(std::io::stdout(), "{name} {}", format_g6(value))?;
    let mut o = Outcome::default();
    if let Some(path) = &a.out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["metric", "class", "value"])?;
        w.write_record([name, "all", &format_g6(value)])?;
        for (c, ap) in &per_class {
            w.write_record(["ap", &c.to_string(), &format_g6(*ap)])?;
        }
        w.flush()?;
        o.artifacts.push(path.clone());
    }
    o.set("metric", name);
    o.set("pred", a.pred.display());
    o.set("truth", a.truth.display());
    o.set("value", format_g6(value));
    Ok(o)
}
