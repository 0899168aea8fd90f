//! Box regression over the shared feature maps, mapping of window-relative
//! predictions into image space, greedy box accumulation, and the evaluation
//! metrics.

mod eval;
mod merge;
mod records;

pub use eval::{
    average_precision, evaluate_classification, evaluate_detection_map, evaluate_localization, iou,
    DetectionReport,
};
pub use merge::{box_merge, greedy_merge, match_score, MergeConfig, MergeOutcome, Provenance, ScoredBox};
pub use records::{format_g6, format_records, parse_records, read_records, write_records, Record, RECORDS_HEADER};

use rayon::prelude::*;

use crate::arch::{weights::init_tensors, ArchKind, ArchSpec, InitScheme, StoreHeader, StoreKind, WeightStore};
use crate::dense::{apply_classifier, scale_grid, OffsetGrid, OffsetMaps, ScalePlan};
use crate::error::{Error, Result};
use crate::network::dense_mlp;
use crate::tensor::Tensor;

/// Axis-aligned box in continuous pixel coordinates; area is `(x2 − x1)·(y2 − y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct BBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BBox {
    /// Builds a box, reordering the edges so that `x1 ≤ x2` and `y1 ≤ y2`.
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        BBox {
            x1: x1.min(x2),
            y1: y1.min(y2),
            x2: x1.max(x2),
            y2: y1.max(y2),
        }
    }

    pub fn width(&self) -> f32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f32 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f32, f32) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    pub fn intersection(&self, other: &BBox) -> f32 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
    }

    pub fn clamp_to(&self, height: f32, width: f32) -> BBox {
        BBox::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
    }

    pub fn mirrored(&self, width: f32) -> BBox {
        BBox::new(width - self.x2, self.y1, width - self.x1, self.y2)
    }
}

/// Fraction of `object` lying inside `window`; 0 for degenerate objects.
pub fn overlap_fraction(object: &BBox, window: &BBox) -> f32 {
    let a = object.area();
    if a <= 0.0 {
        0.0
    } else {
        object.intersection(window) / a
    }
}

/// A window trains the regressor only if at least half of the object lies inside it.
pub fn regression_target_ok(object: &BBox, window: &BBox) -> bool {
    overlap_fraction(object, window) >= 0.5
}

/// Shape of the regression network that sits on the pooled top maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegressorSpec {
    pub hidden1: usize,
    pub hidden2: usize,
    /// 1 for a head shared by all classes, otherwise one head per class.
    pub heads: usize,
}

impl RegressorSpec {
    pub fn for_arch(spec: &ArchSpec, heads: usize) -> Self {
        let f = match spec.kind {
            ArchKind::Toy => spec.scale_factor,
            _ => 1,
        };
        RegressorSpec {
            hidden1: 4096 / f,
            hidden2: 1024 / f,
            heads: heads.max(1),
        }
    }

    pub fn per_class(&self) -> bool {
        self.heads > 1
    }

    /// Head used for `class_id`.
    pub fn head_for(&self, class_id: usize) -> usize {
        if self.per_class() {
            class_id
        } else {
            0
        }
    }

    pub fn param_shapes(&self, spec: &ArchSpec) -> Vec<(String, Vec<usize>)> {
        vec![
            ("reg1.weight".into(), vec![self.hidden1, spec.classifier_fan_in()]),
            ("reg1.bias".into(), vec![self.hidden1]),
            ("reg2.weight".into(), vec![self.hidden2, self.hidden1]),
            ("reg2.bias".into(), vec![self.hidden2]),
            ("reg3.weight".into(), vec![4 * self.heads, self.hidden2]),
            ("reg3.bias".into(), vec![4 * self.heads]),
        ]
    }
}

pub fn init_regressor(spec: &ArchSpec, heads: usize, seed: u64, scheme: InitScheme) -> WeightStore {
    let rs = RegressorSpec::for_arch(spec, heads);
    let header = StoreHeader {
        kind: StoreKind::Regressor,
        arch: spec.name().to_string(),
        num_classes: spec.num_classes,
        scale_factor: spec.scale_factor,
        heads: rs.heads,
        steps: 0,
    };
    WeightStore::new(header, init_tensors(&rs.param_shapes(spec), seed, scheme))
}

/// Regression outputs for every offset map: `4·heads` channels of window-normalised edges.
pub fn regress_dense(grid: &OffsetGrid, spec: &ArchSpec, regressor: &WeightStore) -> Result<OffsetMaps> {
    let params = regressor.params();
    if params.len() != 6 {
        return Err(Error::Format(format!("regressor store holds {} tensors, expected 6", params.len())));
    }
    grid.maps
        .iter()
        .map(|col| {
            col.iter()
                .map(|m| {
                    let (_, h, w) = m.chw()?;
                    let (fh, fw) = spec.classifier_input;
                    if h < fh || w < fw {
                        return Err(Error::InputTooSmall(format!(
                            "pooled map {h}x{w} is smaller than the {fh}x{fw} regressor field"
                        )));
                    }
                    dense_mlp(m, &[0, 2, 4], &params, spec.classifier_input)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Output cell of the dense pipeline: pooled-grid position plus pooling offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
    pub dy: usize,
    pub dx: usize,
}

/// Maps output cells of one scale to their input windows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowGeometry {
    pub scale: usize,
    /// Input pixels between horizontally or vertically adjacent unpooled cells.
    pub stride: usize,
    pub pool: usize,
    /// Window extent `(h, w)` in scale-input pixels.
    pub window: (usize, usize),
    /// Original-image pixels per scale-input pixel, `(y, x)`.
    pub factor: (f32, f32),
}

impl WindowGeometry {
    pub fn new(spec: &ArchSpec, scale: usize, scale_input: (usize, usize), original: (usize, usize)) -> Self {
        WindowGeometry {
            scale,
            stride: spec.feature_downsampling,
            pool: spec.final_pool,
            window: spec.train_input,
            factor: (
                original.0 as f32 / scale_input.0 as f32,
                original.1 as f32 / scale_input.1 as f32,
            ),
        }
    }

    /// Top-left corner `(y, x)` in scale-input pixels.
    pub fn origin(&self, cell: Cell) -> (usize, usize) {
        (
            (self.pool * cell.row + cell.dy) * self.stride,
            (self.pool * cell.col + cell.dx) * self.stride,
        )
    }

    /// The window in original-image coordinates.
    pub fn window_box(&self, cell: Cell) -> BBox {
        let (oy, ox) = self.origin(cell);
        BBox::new(
            ox as f32 * self.factor.1,
            oy as f32 * self.factor.0,
            (ox + self.window.1) as f32 * self.factor.1,
            (oy + self.window.0) as f32 * self.factor.0,
        )
    }
}

/// Window-normalised `(x1, y1, x2, y2)` to original-image pixels, clamped to `image` = `(h, w)`.
pub fn to_image_coords(pred: [f32; 4], geom: &WindowGeometry, cell: Cell, image: (usize, usize)) -> BBox {
    let (oy, ox) = geom.origin(cell);
    let (wh, ww) = (geom.window.0 as f32, geom.window.1 as f32);
    let sx = |v: f32| (ox as f32 + v * ww) * geom.factor.1;
    let sy = |v: f32| (oy as f32 + v * wh) * geom.factor.0;
    BBox::new(sx(pred[0]), sy(pred[1]), sx(pred[2]), sy(pred[3])).clamp_to(image.0 as f32, image.1 as f32)
}

/// Inverse of [`to_image_coords`] (without clamping): the regression target for `object`.
pub fn encode_box(object: &BBox, geom: &WindowGeometry, cell: Cell) -> [f32; 4] {
    let (oy, ox) = geom.origin(cell);
    let (wh, ww) = (geom.window.0 as f32, geom.window.1 as f32);
    let ex = |v: f32| (v / geom.factor.1 - ox as f32) / ww;
    let ey = |v: f32| (v / geom.factor.0 - oy as f32) / wh;
    [ex(object.x1), ey(object.y1), ex(object.x2), ey(object.y2)]
}

/// Classifier probabilities and regressor outputs of one scale.
#[derive(Clone, Debug)]
pub struct ScaleOutputs {
    pub geometry: WindowGeometry,
    pub classes: OffsetMaps,
    pub boxes: OffsetMaps,
}

/// Runs the shared feature extractor once and both heads on top of it.
pub fn scale_outputs(
    image: &Tensor,
    spec: &ArchSpec,
    classifier: &WeightStore,
    regressor: &WeightStore,
    size: (usize, usize),
    scale: usize,
) -> Result<ScaleOutputs> {
    let (_, h, w) = image.chw()?;
    let grid = scale_grid(image, spec, classifier, size, scale)?;
    Ok(ScaleOutputs {
        geometry: WindowGeometry::new(spec, scale, size, (h, w)),
        classes: apply_classifier(&grid, classifier, spec)?,
        boxes: regress_dense(&grid, spec, regressor)?,
    })
}

fn cells(maps: &OffsetMaps) -> impl Iterator<Item = (Cell, &Tensor)> + '_ {
    maps.iter().enumerate().flat_map(|(dx, col)| {
        col.iter().enumerate().flat_map(move |(dy, m)| {
            let (h, w) = (m.shape()[1], m.shape()[2]);
            (0..h).flat_map(move |row| (0..w).map(move |c| (Cell { row, col: c, dy, dx }, m)))
        })
    })
}

/// The `k` classes (among the first `object_classes`) with the highest spatial maximum.
pub fn top_classes(outputs: &ScaleOutputs, k: usize, object_classes: usize) -> Vec<usize> {
    let mut best = vec![f32::NEG_INFINITY; object_classes];
    for (cell, m) in cells(&outputs.classes) {
        for (c, b) in best.iter_mut().enumerate() {
            *b = b.max(m.at3(c, cell.row, cell.col));
        }
    }
    crate::dense::top_k(&best, k).into_iter().map(|(c, _)| c).collect()
}

/// The candidate set: for each scale, a box per location for every top-`k` class.
pub fn candidate_boxes(
    outputs: &[ScaleOutputs],
    k: usize,
    object_classes: usize,
    reg: &RegressorSpec,
    image: (usize, usize),
) -> Vec<ScoredBox> {
    let mut out = Vec::new();
    for so in outputs {
        for class_id in top_classes(so, k, object_classes) {
            let head = reg.head_for(class_id);
            for (cell, m) in cells(&so.classes) {
                let rm = &so.boxes[cell.dx][cell.dy];
                let pred = [0, 1, 2, 3].map(|i| rm.at3(4 * head + i, cell.row, cell.col));
                out.push(ScoredBox {
                    bbox: to_image_coords(pred, &so.geometry, cell, image),
                    class_id,
                    confidence: m.at3(class_id, cell.row, cell.col) as f64,
                    support: 1,
                    provenance: vec![Provenance {
                        scale: so.geometry.scale,
                        dx: cell.dx,
                        dy: cell.dy,
                        row: cell.row,
                        col: cell.col,
                    }],
                });
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalizeConfig {
    /// Classes kept per scale.
    pub k: usize,
    /// Merge threshold; 0 disables merging.
    pub t: f64,
    /// Classes eligible for boxes (a detector's background class is excluded).
    pub object_classes: usize,
}

/// Full localisation pipeline on a `[0, 1]` image: scales, both heads, candidates, merging.
pub fn localize(
    image: &Tensor,
    spec: &ArchSpec,
    classifier: &WeightStore,
    regressor: &WeightStore,
    plan: &ScalePlan,
    cfg: &LocalizeConfig,
) -> Result<Vec<ScoredBox>> {
    let (_, h, w) = image.chw()?;
    let reg = RegressorSpec::for_arch(spec, regressor.header.heads);
    let results: Vec<Result<ScaleOutputs>> = plan
        .rows
        .par_iter()
        .enumerate()
        .map(|(s, row)| scale_outputs(image, spec, classifier, regressor, row.input, s))
        .collect();
    let mut outputs = Vec::with_capacity(results.len());
    let mut last_err = None;
    for (s, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => outputs.push(o),
            Err(e) => {
                log::warn!("scale {s} skipped: {e}");
                last_err = Some(e);
            }
        }
    }
    if outputs.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::invalid("empty scale plan")));
    }
    let boxes = candidate_boxes(&outputs, cfg.k, cfg.object_classes, &reg, (h, w));
    if cfg.t <= 0.0 {
        let mut boxes = boxes;
        merge::sort_ranked(&mut boxes);
        return Ok(boxes);
    }
    let mc = MergeConfig::new(cfg.t, cfg.k, ((h * h + w * w) as f64).sqrt())?;
    Ok(greedy_merge(boxes, &mc)?.boxes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::build_accurate;

    #[test]
    fn window_origins() {
        let g = WindowGeometry::new(&build_accurate(), 0, (245, 245), (245, 245));
        assert_eq!(g.origin(Cell { row: 1, col: 0, dy: 0, dx: 0 }), (36, 0));
        assert_eq!(g.origin(Cell { row: 0, col: 1, dy: 2, dx: 1 }), (24, 48));
        let full = to_image_coords([0.0, 0.0, 1.0, 1.0], &g, Cell { row: 0, col: 0, dy: 0, dx: 0 }, (245, 245));
        assert_eq!(full, BBox::new(0.0, 0.0, 221.0, 221.0));
    }

    #[test]
    fn encode_decode_round_trip() {
        let g = WindowGeometry::new(&build_accurate(), 1, (281, 317), (200, 250));
        let cell = Cell { row: 1, col: 2, dy: 1, dx: 2 };
        let b = BBox::new(60.0, 40.0, 150.0, 170.0);
        let back = to_image_coords(encode_box(&b, &g, cell), &g, cell, (200, 250));
        for (a, e) in [back.x1, back.y1, back.x2, back.y2].iter().zip([b.x1, b.y1, b.x2, b.y2]) {
            assert!((a - e).abs() < 0.5, "{back:?} vs {b:?}");
        }
    }

    #[test]
    fn overlap_predicate() {
        let window = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert!(regression_target_ok(&BBox::new(2.0, 2.0, 8.0, 8.0), &window));
        assert!(!regression_target_ok(&BBox::new(6.0, 0.0, 16.0, 10.0), &window));
        assert!(regression_target_ok(&BBox::new(5.0, 0.0, 15.0, 10.0), &window));
    }

    #[test]
    fn regressor_heads() {
        let spec = build_accurate();
        let shared = RegressorSpec::for_arch(&spec, 1);
        assert_eq!(shared.param_shapes(&spec)[0].1, vec![4096, 1024 * 25]);
        assert_eq!(shared.param_shapes(&spec)[4].1, vec![4, 1024]);
        let pcr = RegressorSpec::for_arch(&spec.with_num_classes(4), 4);
        assert_eq!(pcr.param_shapes(&build_accurate())[4].1, vec![16, 1024]);
        assert_eq!(pcr.head_for(3), 3);
        assert_eq!(shared.head_for(3), 0);
    }
}
