//! Multi-scale dense classification with offset pooling.
//!
//! The unpooled top feature maps of one forward pass are pooled `p × p` times,
//! once per pixel offset `(Δx, Δy)`. The fully-connected stack slides over each
//! pooled map, and the per-offset outputs are woven back together into a map
//! that is `p` times denser along each axis than plain pooling would give.

use rayon::prelude::*;

use crate::arch::{ArchKind, ArchSpec, StoreHeader, StoreKind, WeightStore};
use crate::error::{Error, Result};
use crate::image::{prepare_input, resize_bilinear};
use crate::network::{dense_head, forward_features};
use crate::tensor::{maxpool, softmax, Tensor};

/// Input sizes of the accurate model's six evaluation scales.
pub const ACCURATE_SCALES: [(usize, usize); 6] = [
    (245, 245),
    (281, 317),
    (317, 389),
    (389, 461),
    (425, 497),
    (461, 569),
];

/// Linear size ratio between consecutive generated scales.
pub const SCALE_RATIO: f64 = 1.4;
const SEARCH_LIMIT: usize = 4096;

/// Spatial bookkeeping for one scale; pooled and classifier extents are those at offset 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScaleRow {
    pub input: (usize, usize),
    pub unpooled: (usize, usize),
    pub pooled: (usize, usize),
    pub classifier: (usize, usize),
    pub output: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScalePlan {
    pub rows: Vec<ScaleRow>,
}

impl ScalePlan {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn inputs(&self) -> Vec<(usize, usize)> {
        self.rows.iter().map(|r| r.input).collect()
    }

    /// Plan restricted to its first `n` scales.
    pub fn truncated(&self, n: usize) -> ScalePlan {
        ScalePlan {
            rows: self.rows[..n.min(self.rows.len())].to_vec(),
        }
    }
}

/// Computes every column of the multi-scale table for one input size.
pub fn scale_row(spec: &ArchSpec, input: (usize, usize)) -> Result<ScaleRow> {
    let unpooled = spec.unpooled_extent(input)?;
    let p = spec.final_pool;
    let pooled = match (
        crate::tensor::sliding_extent(unpooled.0, p, p),
        crate::tensor::sliding_extent(unpooled.1, p, p),
    ) {
        (Some(h), Some(w)) => (h, w),
        _ => {
            return Err(Error::InputTooSmall(format!(
                "{}x{} input gives {}x{} top maps, too small for {p}x{p} pooling",
                input.0, input.1, unpooled.0, unpooled.1
            )))
        }
    };
    let (fh, fw) = spec.classifier_input;
    if pooled.0 < fh || pooled.1 < fw {
        return Err(Error::InputTooSmall(format!(
            "{}x{} input gives {}x{} pooled maps, smaller than the {fh}x{fw} classifier field",
            input.0, input.1, pooled.0, pooled.1
        )));
    }
    let classifier = (pooled.0 - fh + 1, pooled.1 - fw + 1);
    Ok(ScaleRow {
        input,
        unpooled,
        pooled,
        classifier,
        output: (classifier.0 * p, classifier.1 * p),
    })
}

/// Smallest exactly-fitting square size at or above `min`.
fn next_fitting(spec: &ArchSpec, min: usize) -> Option<usize> {
    (min..=SEARCH_LIMIT).find(|&s| spec.fits_exactly((s, s)) && scale_row(spec, (s, s)).is_ok())
}

/// Square sizes for architectures without a fixed table: start at the first
/// exactly-fitting size no smaller than the training window, then repeatedly
/// take the fitting size nearest to `SCALE_RATIO` times the previous one.
pub fn generated_scales(spec: &ArchSpec, count: usize) -> Result<Vec<(usize, usize)>> {
    let first = next_fitting(spec, spec.train_input.0.max(spec.train_input.1)).ok_or_else(|| {
        Error::InvalidArgument(format!("no exactly-fitting input size for {} below {SEARCH_LIMIT}", spec.name()))
    })?;
    let mut sizes = vec![first];
    while sizes.len() < count {
        let prev = *sizes.last().expect("non-empty");
        let target = prev as f64 * SCALE_RATIO;
        let fitting: Vec<usize> = (prev + 1..=SEARCH_LIMIT)
            .filter(|&s| spec.fits_exactly((s, s)))
            .take_while(|&s| (s as f64) < 2.0 * target)
            .collect();
        let best = fitting
            .into_iter()
            .min_by(|&a, &b| (a as f64 - target).abs().total_cmp(&(b as f64 - target).abs()).then(a.cmp(&b)))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no exactly-fitting input size near {target:.0} for {}",
                    spec.name()
                ))
            })?;
        sizes.push(best);
    }
    Ok(sizes.into_iter().map(|s| (s, s)).collect())
}

pub fn make_scale_plan(spec: &ArchSpec, scale_count: usize) -> Result<ScalePlan> {
    if !(1..=6).contains(&scale_count) {
        return Err(Error::invalid(format!("scale count must be in 1..=6, got {scale_count}")));
    }
    let inputs = match spec.kind {
        ArchKind::Accurate => ACCURATE_SCALES[..scale_count].to_vec(),
        _ => generated_scales(spec, scale_count)?,
    };
    let rows = inputs
        .into_iter()
        .map(|i| scale_row(spec, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalePlan { rows })
}

/// Plan scales `first .. first + count`.
pub fn plan_range(spec: &ArchSpec, first: usize, count: usize) -> Result<ScalePlan> {
    let full = make_scale_plan(spec, first + count)?;
    Ok(ScalePlan {
        rows: full.rows[first..].to_vec(),
    })
}

/// The `p × p` family of pooled maps, `maps[Δx][Δy]`.
#[derive(Clone, Debug)]
pub struct OffsetGrid {
    pub maps: Vec<Vec<Tensor>>,
    pub scale: usize,
}

impl OffsetGrid {
    pub fn pool(&self) -> usize {
        self.maps.len()
    }

    pub fn get(&self, dx: usize, dy: usize) -> &Tensor {
        &self.maps[dx][dy]
    }
}

pub fn offset_pool(unpooled: &Tensor, pool: usize) -> Result<OffsetGrid> {
    let (_, h, w) = unpooled.chw()?;
    if pool == 0 || h < 2 * pool - 1 || w < 2 * pool - 1 {
        return Err(Error::InputTooSmall(format!(
            "offset pooling {pool}x{pool} needs maps of at least {0}x{0}, got {h}x{w}",
            2 * pool - 1
        )));
    }
    let maps = (0..pool)
        .map(|dx| {
            (0..pool)
                .map(|dy| Ok(maxpool(unpooled, (pool, pool), (pool, pool), (dy, dx))?.output))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OffsetGrid { maps, scale: 0 })
}

/// Which offsets to evaluate: all `p × p` (fine) or `(0, 0)` only (coarse).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Stride {
    #[default]
    Fine,
    Coarse,
}

/// Per-offset maps with the same `[Δx][Δy]` indexing as [`OffsetGrid`].
pub type OffsetMaps = Vec<Vec<Tensor>>;

/// Slides the classifier over every offset map; each location holds class probabilities.
pub fn apply_classifier(grid: &OffsetGrid, weights: &WeightStore, spec: &ArchSpec) -> Result<OffsetMaps> {
    grid.maps
        .iter()
        .map(|col| {
            col.iter()
                .map(|m| softmax(&dense_head(spec, weights, m)?))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Weaves per-offset maps into one map: `out[c, p·r + Δy, p·col + Δx] = maps[Δx][Δy][c, r, col]`.
/// Offsets with an extra row or column are trimmed to the common grid.
pub fn interleave(maps: &OffsetMaps) -> Result<Tensor> {
    let p = maps.len();
    if p == 0 || maps.iter().any(|c| c.len() != p) {
        return Err(Error::invalid("interleave needs a square grid of offset maps"));
    }
    let (c, mut rows, mut cols) = maps[0][0].chw()?;
    for m in maps.iter().flatten() {
        let (mc, mh, mw) = m.chw()?;
        if mc != c {
            return Err(Error::shape("interleave", format!("channel counts {c} and {mc} differ")));
        }
        rows = rows.min(mh);
        cols = cols.min(mw);
    }
    let (oh, ow) = (rows * p, cols * p);
    let mut out = vec![0.0f32; c * oh * ow];
    for (dx, column) in maps.iter().enumerate() {
        for (dy, m) in column.iter().enumerate() {
            let (_, _, mw) = m.chw()?;
            let src = m.data();
            let mh = m.shape()[1];
            for ch in 0..c {
                for r in 0..rows {
                    for col in 0..cols {
                        out[(ch * oh + p * r + dy) * ow + p * col + dx] = src[(ch * mh + r) * mw + col];
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// One scale's probability map.
#[derive(Clone, Debug)]
pub struct ClassScoreMap {
    pub scores: Tensor,
    pub scale: usize,
    pub flipped: bool,
}

impl ClassScoreMap {
    /// Per-class maximum over all locations.
    pub fn spatial_max(&self) -> Vec<f32> {
        let (c, h, w) = self.scores.chw().expect("score maps are rank 3");
        let d = self.scores.data();
        (0..c)
            .map(|ch| d[ch * h * w..(ch + 1) * h * w].iter().copied().fold(f32::NEG_INFINITY, f32::max))
            .collect()
    }
}

/// Resizes `image` (values in `[0, 1]`) to `size` and prepares it for `spec`.
pub fn scale_input(image: &Tensor, spec: &ArchSpec, size: (usize, usize)) -> Result<Tensor> {
    prepare_input(&resize_bilinear(image, size.0, size.1)?, spec.input_channels)
}

/// Top feature maps, offset-pooled, for one scale.
pub fn scale_grid(image: &Tensor, spec: &ArchSpec, weights: &WeightStore, size: (usize, usize), scale: usize) -> Result<OffsetGrid> {
    let input = scale_input(image, spec, size)?;
    let features = forward_features(spec, weights, &input)?;
    let mut grid = offset_pool(&features, spec.final_pool)?;
    grid.scale = scale;
    Ok(grid)
}

/// Dense class probabilities for one already-pooled scale.
pub fn score_map(grid: &OffsetGrid, weights: &WeightStore, spec: &ArchSpec, stride: Stride, flipped: bool) -> Result<ClassScoreMap> {
    let scores = match stride {
        Stride::Fine => interleave(&apply_classifier(grid, weights, spec)?)?,
        Stride::Coarse => softmax(&dense_head(spec, weights, grid.get(0, 0))?)?,
    };
    Ok(ClassScoreMap {
        scores,
        scale: grid.scale,
        flipped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiscaleOptions {
    pub stride: Stride,
    pub flips: bool,
    pub top_k: usize,
}

impl Default for MultiscaleOptions {
    fn default() -> Self {
        MultiscaleOptions {
            stride: Stride::Fine,
            flips: true,
            top_k: 5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Classification {
    /// Mean over scales and flips of the per-class spatial maxima.
    pub vector: Vec<f32>,
    pub ranked: Vec<(usize, f32)>,
    pub maps: Vec<ClassScoreMap>,
}

/// Classes sorted by descending score, ties by class index, truncated to `k`.
pub fn top_k(vector: &[f32], k: usize) -> Vec<(usize, f32)> {
    let mut ranked: Vec<(usize, f32)> = vector.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

/// Element-wise mean of equally long vectors, accumulated in the given order.
pub fn mean_vectors(vectors: &[Vec<f32>]) -> Result<Vec<f32>> {
    let first = vectors.first().ok_or_else(|| Error::invalid("cannot average zero vectors"))?;
    let mut acc = vec![0.0f64; first.len()];
    for v in vectors {
        if v.len() != acc.len() {
            return Err(Error::shape("mean", format!("vector lengths {} and {} differ", acc.len(), v.len())));
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += *x as f64;
        }
    }
    let n = vectors.len() as f64;
    Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
}

pub fn classify_multiscale(
    image: &Tensor,
    spec: &ArchSpec,
    weights: &WeightStore,
    plan: &ScalePlan,
    opts: MultiscaleOptions,
) -> Result<Classification> {
    let views: Vec<(usize, bool)> = (0..plan.len())
        .flat_map(|s| {
            let flips: &[bool] = if opts.flips { &[false, true] } else { &[false] };
            flips.iter().map(move |&f| (s, f))
        })
        .collect();
    let flipped_image = if opts.flips { Some(image.flip_horizontal()?) } else { None };
    let results: Vec<Result<ClassScoreMap>> = views
        .par_iter()
        .map(|&(s, flipped)| {
            let src = if flipped { flipped_image.as_ref().expect("flip prepared") } else { image };
            let grid = scale_grid(src, spec, weights, plan.rows[s].input, s)?;
            score_map(&grid, weights, spec, opts.stride, flipped)
        })
        .collect();
    let mut maps = Vec::with_capacity(results.len());
    let mut last_err = None;
    for (r, (s, f)) in results.into_iter().zip(&views) {
        match r {
            Ok(m) => maps.push(m),
            Err(e) => {
                log::warn!("scale {s} (flip {f}) skipped: {e}");
                last_err = Some(e);
            }
        }
    }
    if maps.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::invalid("empty scale plan")));
    }
    let vector = mean_vectors(&maps.iter().map(ClassScoreMap::spatial_max).collect::<Vec<_>>())?;
    Ok(Classification {
        ranked: top_k(&vector, opts.top_k),
        vector,
        maps,
    })
}

/// Mean of per-model class vectors.
pub fn fuse_ensemble(per_model: &[Vec<f32>]) -> Result<Vec<f32>> {
    mean_vectors(per_model)
}

/// Packs score maps into a store for dumping with the weight-file container.
pub fn score_dump(spec: &ArchSpec, maps: &[ClassScoreMap]) -> WeightStore {
    let header = StoreHeader {
        kind: StoreKind::ScoreDump,
        arch: spec.name().to_string(),
        num_classes: spec.num_classes,
        scale_factor: spec.scale_factor,
        heads: 0,
        steps: 0,
    };
    let tensors = maps
        .iter()
        .map(|m| (format!("scale{}/{}", m.scale, if m.flipped { "flip" } else { "orig" }), m.scores.clone()))
        .collect();
    WeightStore::new(header, tensors)
}
