use std::path::PathBuf;

use clap::Args;
use slidenet::train::{make_synthetic_dataset_with, read_dataset, write_dataset, DatasetOptions};

use crate::error::{CliError, CliResult};
use crate::manifest::Outcome;

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Dataset directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    /// Side length of the square images in pixels.
    #[arg(long, default_value_t = 48)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub min_objects: usize,
    #[arg(long, default_value_t = 2)]
    pub max_objects: usize,
    /// Smallest object side as a fraction of the image side.
    #[arg(long, default_value_t = 0.25)]
    pub min_extent: f32,
    #[arg(long, default_value_t = 0.5)]
    pub max_extent: f32,
}

pub fn run(a: &GenDataArgs) -> CliResult<Outcome> {
    let opts = DatasetOptions {
        min_objects: a.min_objects,
        max_objects: a.max_objects,
        min_extent: a.min_extent,
        max_extent: a.max_extent,
    };
    let samples = make_synthetic_dataset_with(a.n, a.classes, a.size, a.seed, opts)?;
    write_dataset(&a.out, &samples)?;
    let back = read_dataset(&a.out)?;
    if back.len() != samples.len() {
        return Err(CliError::Consistency(format!("wrote {} images, read back {}", samples.len(), back.len())));
    }
    let mut o = Outcome {
        seed: Some(a.seed),
        artifacts: vec![a.out.join("images.txt"), a.out.join("truth.txt"), a.out.join("images")],
        ..Outcome::default()
    };
    o.set("n", a.n);
    o.set("classes", a.classes);
    o.set("size", a.size);
    o.set("objects", format!("{}..={}", a.min_objects, a.max_objects));
    o.set("extent", format!("{}..={}", a.min_extent, a.max_extent));
    Ok(o)
}
