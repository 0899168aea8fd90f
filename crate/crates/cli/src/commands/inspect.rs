use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use slidenet::dense::make_scale_plan;
use slidenet::{ArchKind, ArchSpec};

use super::Arch;
use crate::error::{CliError, CliResult};
use crate::manifest::Outcome;
use crate::tables;

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long, value_enum)]
    pub arch: Arch,
    /// Output classes; the published tables use 1000.
    #[arg(long, default_value_t = 1000)]
    pub classes: usize,
    #[arg(long, default_value_t = 16)]
    pub scale_factor: usize,
    /// Report file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn dims(d: (usize, usize)) -> String {
    format!("{}x{}", d.0, d.1)
}

fn opt(d: Option<(usize, usize)>) -> String {
    d.map_or("-".into(), dims)
}

/// Layer trace, multi-scale table and counts as fixed-width text.
pub fn report(spec: &ArchSpec) -> slidenet::Result<String> {
    let mut s = String::new();
    let w = |s: &mut String, line: String| writeln!(s, "{}", line.trim_end()).expect("string write");
    w(&mut s, format!("architecture {} ({} classes, training input {})", spec.name(), spec.num_classes, dims(spec.train_input)));
    w(&mut s, String::new());
    w(&mut s, format!("{:<6}{:<12}{:>9}  {:<8}{:<8}{:<8}{:<10}{:<10}{:<10}{:<10}", "layer", "stage", "channels", "filter", "stride", "pool", "padding", "input", "conv", "output"));
    for (l, t) in spec.layers.iter().zip(spec.trace(spec.train_input)?) {
        let pad = l.zero_pad.map_or("-".into(), |p| format!("{}x{}x{}x{}", p.top, p.bottom, p.left, p.right));
        let pool = match (l.pool, l.pool_stride) {
            (Some(p), Some(st)) if p != st => format!("{}/{}", dims(p), dims(st)),
            (p, _) => opt(p),
        };
        w(
            &mut s,
            format!(
                "{:<6}{:<12}{:>9}  {:<8}{:<8}{:<8}{:<10}{:<10}{:<10}{:<10}",
                l.index,
                l.stage.to_string(),
                l.channels,
                opt(l.filter),
                opt(l.conv_stride),
                pool,
                pad,
                dims(t.input),
                dims(t.conv_output),
                dims(t.output)
            ),
        );
    }
    w(&mut s, String::new());
    w(&mut s, format!("parameters  {:.3}M ({})", spec.count_parameters() as f64 / 1e6, spec.count_parameters()));
    w(&mut s, format!("connections {:.3}M ({})", spec.count_connections() as f64 / 1e6, spec.count_connections()));
    w(&mut s, String::new());
    let count = if spec.kind == ArchKind::Toy { 4 } else { 6 };
    let p = spec.final_pool;
    w(&mut s, format!("{:<6}{:<10}{:<10}{:<16}{:<18}{:<12}", "scale", "input", "unpooled", "pooled", "classifier", "output"));
    for (i, r) in make_scale_plan(spec, count)?.rows.iter().enumerate() {
        w(
            &mut s,
            format!(
                "{:<6}{:<10}{:<10}{:<16}{:<18}{:<12}",
                i + 1,
                dims(r.input),
                dims(r.unpooled),
                format!("({})x({p}x{p})", dims(r.pooled)),
                format!("({})x({p}x{p})xC", dims(r.classifier)),
                format!("{}xC", dims(r.output))
            ),
        );
    }
    Ok(s)
}

pub fn run(a: &InspectArgs) -> CliResult<(Outcome, Option<CliError>)> {
    let factor = if a.arch == Arch::Toy { a.scale_factor } else { 1 };
    let classes = if a.arch == Arch::Toy && a.classes == 1000 { 6 } else { a.classes };
    let spec = ArchSpec::from_parts(a.arch.kind(), classes, factor)?;
    let mut text = report(&spec)?;
    let mismatches = if classes == 1000 { tables::mismatches(&spec)? } else { Vec::new() };
    if tables::expected_for(spec.kind).is_some() && classes == 1000 {
        text.push('\n');
        if mismatches.is_empty() {
            text.push_str("published tables: all cells match\n");
        } else {
            let n = mismatches.len();
            let noun = if n == 1 { "cell differs" } else { "cells differ" };
            writeln!(text, "published tables: {n} {noun}").expect("string write");
            for m in &mismatches {
                writeln!(text, "  {m}").expect("string write");
            }
        }
    }
    let mut o = Outcome {
        arch: Some(spec.name().to_string()),
        ..Outcome::default()
    };
    match &a.out {
        Some(p) => {
            fs::write(p, &text)?;
            o.artifacts.push(p.clone());
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    o.set("classes", classes);
    o.set("scale_factor", factor);
    o.set("mismatches", mismatches.len());
    let failure = (!mismatches.is_empty()).then(|| CliError::Consistency(mismatches.join("; ")));
    Ok((o, failure))
}
