//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slidenet::arch::{init_weights_with, InitScheme};
use slidenet::cost::windows_per_offset;
use slidenet::dense::{apply_classifier, scale_grid, scale_input, OffsetMaps, Stride};
use slidenet::localize::{Provenance, ScoredBox};
use slidenet::network::classify_window;
use slidenet::{build_toy, ArchSpec, BBox, Result, Tensor, WeightStore};

pub fn uniform(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub struct Toy {
    pub spec: ArchSpec,
    pub weights: WeightStore,
    pub image: Tensor,
    pub size: (usize, usize),
}

/// Six-class toy network with fan-in weights and a random grey image of side `side`.
pub fn toy(side: usize) -> Toy {
    let spec = build_toy(6, 16).expect("toy architecture");
    let weights = init_weights_with(&spec, 7, InitScheme::FanIn { gain: 2f32.sqrt() });
    Toy {
        image: uniform(&[1, side, side], side as u64),
        size: (side, side),
        spec,
        weights,
    }
}

impl Toy {
    pub fn dense(&self) -> Result<OffsetMaps> {
        let grid = scale_grid(&self.image, &self.spec, &self.weights, self.size, 0)?;
        apply_classifier(&grid, &self.weights, &self.spec)
    }

    /// The same windows as [`Toy::dense`], each cropped and run on its own.
    pub fn naive(&self) -> Result<Vec<Tensor>> {
        let input = scale_input(&self.image, &self.spec, self.size)?;
        let (step, p) = (self.spec.feature_downsampling, self.spec.final_pool);
        let (th, tw) = self.spec.train_input;
        let mut out = Vec::new();
        for (dy, dx, rows, cols) in windows_per_offset(&self.spec, self.size, Stride::Fine)? {
            for r in 0..rows {
                for c in 0..cols {
                    let crop = input.crop((p * r + dy) * step, (p * c + dx) * step, th, tw)?;
                    out.push(classify_window(&self.spec, &self.weights, &crop)?);
                }
            }
        }
        Ok(out)
    }
}

/// `n` single-window boxes in three classes, clustered around a few centres on a 200×200 image.
pub fn merge_boxes(n: usize, seed: u64) -> Vec<ScoredBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<(f32, f32)> = (0..4).map(|_| (rng.gen_range(40.0..160.0), rng.gen_range(40.0..160.0))).collect();
    (0..n)
        .map(|i| {
            let (cx, cy) = centres[i % centres.len()];
            let (x, y) = (cx + rng.gen_range(-15.0..15.0), cy + rng.gen_range(-15.0..15.0));
            let (w, h) = (rng.gen_range(20.0..50.0), rng.gen_range(20.0..50.0));
            ScoredBox {
                bbox: BBox::new(x - w / 2.0, y - h / 2.0, x + w / 2.0, y + h / 2.0),
                class_id: i % 3,
                confidence: rng.gen_range(0.05..1.0),
                support: 1,
                provenance: vec![Provenance { scale: i % 6, dx: 0, dy: 0, row: i, col: 0 }],
            }
        })
        .collect()
}
