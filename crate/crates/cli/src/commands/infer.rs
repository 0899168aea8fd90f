use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use slidenet::arch::StoreKind;
use slidenet::dense::{classify_multiscale, plan_range, MultiscaleOptions, Stride};
use slidenet::image::write_ppm;
use slidenet::localize::{format_records, localize, LocalizeConfig, Record, ScoredBox};
use slidenet::Tensor;

use super::{load_images, load_weights};
use crate::error::{CliError, CliResult};
use crate::manifest::Outcome;

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// P6 image files; the file stem becomes the record id.
    #[arg(long)]
    pub image: Vec<PathBuf>,
    /// Dataset directory; every listed image is classified.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub scales: usize,
    #[arg(long, default_value_t = 0)]
    pub first_scale: usize,
    /// Only the zero pooling offset.
    #[arg(long, conflicts_with = "fine")]
    pub coarse: bool,
    /// Every pooling offset (the default).
    #[arg(long)]
    pub fine: bool,
    /// Skip the horizontally flipped views.
    #[arg(long)]
    pub no_flip: bool,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    /// Records file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LocalizeArgs {
    /// Classifier or detector weights.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub regressor: PathBuf,
    #[arg(long)]
    pub image: Vec<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub scales: usize,
    #[arg(long, default_value_t = 0)]
    pub first_scale: usize,
    /// Classes kept per scale.
    #[arg(long, default_value_t = 1)]
    pub top_k: usize,
    /// Merge threshold; 0 emits the raw boxes.
    #[arg(long, default_value_t = 0.1)]
    pub merge_t: f64,
    /// Image with the output boxes drawn on it (a directory when several images are given).
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn emit(records: &[Record], out: Option<&Path>) -> CliResult<Vec<PathBuf>> {
    let text = format_records(records);
    match out {
        Some(p) => {
            fs::write(p, text)?;
            Ok(vec![p.to_path_buf()])
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(Vec::new())
        }
    }
}

pub fn classify(a: &ClassifyArgs) -> CliResult<Outcome> {
    let weights = load_weights(&a.weights)?;
    let spec = weights.arch_spec()?;
    let plan = plan_range(&spec, a.first_scale, a.scales)?;
    let opts = MultiscaleOptions {
        stride: if a.coarse { Stride::Coarse } else { Stride::Fine },
        flips: !a.no_flip,
        top_k: a.top,
    };
    let mut records = Vec::new();
    for (id, image) in load_images(&a.image, a.data.as_deref())? {
        let c = classify_multiscale(&image, &spec, &weights, &plan, opts)?;
        records.extend(c.ranked.into_iter().map(|(class_id, p)| Record {
            image_id: id.clone(),
            class_id,
            confidence: p as f64,
            bbox: None,
        }));
    }
    let mut o = Outcome {
        arch: Some(spec.name().to_string()),
        weights_checksum: Some(weights.checksum()),
        artifacts: emit(&records, a.out.as_deref())?,
        ..Outcome::default()
    };
    o.set("scales", format!("{:?}", plan.inputs()));
    o.set("stride", if a.coarse { "coarse" } else { "fine" });
    o.set("flips", !a.no_flip);
    o.set("top", a.top);
    Ok(o)
}

const PALETTE: [[f32; 3]; 6] = [
    [1.0, 0.2, 0.2],
    [0.2, 1.0, 0.2],
    [0.3, 0.5, 1.0],
    [1.0, 1.0, 0.2],
    [1.0, 0.3, 1.0],
    [0.2, 1.0, 1.0],
];

/// Colour copy of `image` with one-pixel box outlines.
fn overlay(image: &Tensor, boxes: &[ScoredBox]) -> CliResult<Tensor> {
    let (c, h, w) = image.chw()?;
    let mut out = Tensor::from_fn(&[3, h, w], |i| {
        let (ch, rest) = (i / (h * w), i % (h * w));
        image.data()[ch.min(c - 1) * h * w + rest]
    });
    for b in boxes {
        let colour = PALETTE[b.class_id % PALETTE.len()];
        let clampx = |v: f32| (v.round().max(0.0) as usize).min(w - 1);
        let clampy = |v: f32| (v.round().max(0.0) as usize).min(h - 1);
        let (x1, x2, y1, y2) = (clampx(b.bbox.x1), clampx(b.bbox.x2 - 1.0), clampy(b.bbox.y1), clampy(b.bbox.y2 - 1.0));
        let d = out.data_mut();
        let mut put = |y: usize, x: usize| {
            for (ch, v) in colour.iter().enumerate() {
                d[(ch * h + y) * w + x] = *v;
            }
        };
        for x in x1..=x2.max(x1) {
            put(y1, x);
            put(y2, x);
        }
        for y in y1..=y2.max(y1) {
            put(y, x1);
            put(y, x2);
        }
    }
    Ok(out)
}

pub fn localize_cmd(a: &LocalizeArgs) -> CliResult<Outcome> {
    let weights = load_weights(&a.weights)?;
    let regressor = load_weights(&a.regressor)?;
    if regressor.header.kind != StoreKind::Regressor {
        return Err(CliError::Usage(format!("{} is not a regressor weight file", a.regressor.display())));
    }
    let spec = weights.arch_spec()?;
    let object_classes = match weights.header.kind {
        StoreKind::Detector => spec.num_classes - 1,
        _ => spec.num_classes,
    };
    let plan = plan_range(&spec, a.first_scale, a.scales)?;
    let cfg = LocalizeConfig {
        k: a.top_k,
        t: a.merge_t,
        object_classes,
    };
    let images = load_images(&a.image, a.data.as_deref())?;
    let many = images.len() > 1;
    if let (Some(dir), true) = (&a.overlay, many) {
        fs::create_dir_all(dir)?;
    }
    let mut records = Vec::new();
    let mut artifacts = Vec::new();
    for (id, image) in &images {
        let boxes = localize(image, &spec, &weights, &regressor, &plan, &cfg)?;
        if let Some(target) = &a.overlay {
            let path = if many { target.join(format!("{id}.ppm")) } else { target.clone() };
            write_ppm(&path, &overlay(image, &boxes)?)?;
            artifacts.push(path);
        }
        records.extend(boxes.into_iter().map(|b| Record {
            image_id: id.clone(),
            class_id: b.class_id,
            confidence: b.confidence,
            bbox: Some(b.bbox),
        }));
    }
    artifacts.extend(emit(&records, a.out.as_deref())?);
    let mut o = Outcome {
        arch: Some(spec.name().to_string()),
        weights_checksum: Some(weights.checksum()),
        artifacts,
        ..Outcome::default()
    };
    o.set("regressor_checksum", format!("{:#018x}", regressor.checksum()));
    o.set("scales", format!("{:?}", plan.inputs()));
    o.set("top_k", a.top_k);
    o.set("merge_t", a.merge_t);
    Ok(o)
}
