use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slidenet::arch::{init_weights_with, InitScheme};
use slidenet::cost::{count_costs, windows_per_offset, CostReport};
use slidenet::dense::{apply_classifier, make_scale_plan, scale_grid, scale_input, Stride};
use slidenet::network::classify_window;
use slidenet::{ArchSpec, Tensor, WeightStore};

use super::Arch;
use crate::error::{CliError, CliResult};
use crate::manifest::Outcome;

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = Arch::Toy)]
    pub arch: Arch,
    /// Square input sides, comma separated; defaults to the scale plan.
    #[arg(long, value_delimiter = ',')]
    pub image_size: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub repeat: usize,
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    #[arg(long, default_value_t = 16)]
    pub scale_factor: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for `counts.csv` and `timings.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the wall-clock measurements and write only the counts.
    #[arg(long)]
    pub counts_only: bool,
}

fn dense_pass(image: &Tensor, spec: &ArchSpec, weights: &WeightStore, size: (usize, usize)) -> slidenet::Result<()> {
    let grid = scale_grid(image, spec, weights, size, 0)?;
    apply_classifier(&grid, weights, spec)?;
    Ok(())
}

/// Crops every window the dense pass covers and runs the plain network on each.
fn naive_pass(image: &Tensor, spec: &ArchSpec, weights: &WeightStore, size: (usize, usize)) -> slidenet::Result<usize> {
    let input = scale_input(image, spec, size)?;
    let step = spec.feature_downsampling;
    let p = spec.final_pool;
    let mut n = 0;
    for (dy, dx, rows, cols) in windows_per_offset(spec, size, Stride::Fine)? {
        for r in 0..rows {
            for c in 0..cols {
                let crop = input.crop((p * r + dy) * step, (p * c + dx) * step, spec.train_input.0, spec.train_input.1)?;
                classify_window(spec, weights, &crop)?;
                n += 1;
            }
        }
    }
    Ok(n)
}

pub fn run(a: &BenchArgs) -> CliResult<Outcome> {
    if a.repeat == 0 {
        return Err(CliError::Usage("--repeat must be positive".into()));
    }
    let factor = if a.arch == Arch::Toy { a.scale_factor } else { 1 };
    let spec = ArchSpec::from_parts(a.arch.kind(), a.classes, factor)?;
    let sizes: Vec<(usize, usize)> = if a.image_size.is_empty() {
        make_scale_plan(&spec, if a.arch == Arch::Toy { 4 } else { 2 })?.inputs()
    } else {
        a.image_size.iter().map(|&s| (s, s)).collect()
    };
    let reports: Vec<CostReport> = sizes.iter().map(|&s| count_costs(&spec, s, Stride::Fine)).collect::<slidenet::Result<_>>()?;
    fs::create_dir_all(&a.out)?;
    let counts_path = a.out.join("counts.csv");
    let mut w = csv::Writer::from_path(&counts_path)?;
    w.write_record(["height", "width", "windows", "dense_macs", "naive_macs", "ratio"])?;
    for r in &reports {
        w.write_record([
            r.input.0.to_string(),
            r.input.1.to_string(),
            r.windows.to_string(),
            r.dense_macs.to_string(),
            r.naive_macs.to_string(),
            format!("{:.6}", r.ratio()),
        ])?;
    }
    w.flush()?;
    let mut artifacts = vec![counts_path];
    if !a.counts_only {
        let weights = init_weights_with(&spec, a.seed, InitScheme::FanIn { gain: 2f32.sqrt() });
        let timings_path = a.out.join("timings.csv");
        let mut t = csv::Writer::from_path(&timings_path)?;
        t.write_record(["height", "width", "repeat", "dense_seconds", "naive_seconds", "windows"])?;
        for &size in &sizes {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ size.0 as u64);
            let image = Tensor::from_fn(&[3, size.0, size.1], |_| rng.gen::<f32>());
            for rep in 0..a.repeat {
                let start = Instant::now();
                dense_pass(&image, &spec, &weights, size)?;
                let dense = start.elapsed().as_secs_f64();
                let start = Instant::now();
                let n = naive_pass(&image, &spec, &weights, size)?;
                let naive = start.elapsed().as_secs_f64();
                t.write_record([size.0.to_string(), size.1.to_string(), rep.to_string(), format!("{dense:.6}"), format!("{naive:.6}"), n.to_string()])?;
            }
        }
        t.flush()?;
        artifacts.push(timings_path);
    }
    if let Some(r) = reports.iter().find(|r| r.windows > 1 && r.naive_macs <= r.dense_macs) {
        return Err(CliError::Consistency(format!(
            "{}x{}: naive {} MACs not above dense {} over {} windows",
            r.input.0, r.input.1, r.naive_macs, r.dense_macs, r.windows
        )));
    }
    let mut o = Outcome {
        arch: Some(spec.name().to_string()),
        seed: Some(a.seed),
        artifacts,
        ..Outcome::default()
    };
    o.set("sizes", format!("{sizes:?}"));
    o.set("repeat", a.repeat);
    Ok(o)
}
