//! Head fine-tuning on frozen features: the box regressor and the detector.
//!
//! Both heads read the same pooled top-map windows the dense pipeline slides
//! over, so the windows of every training image are extracted once and reused
//! for all epochs.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{apply_update, ensure_velocity, init_scheme, reduce_grads, seeded, EpochStats, NegativeMode, SyntheticSample, TrainConfig, TrainOutcome};
use crate::arch::{ArchSpec, StoreHeader, StoreKind, WeightStore};
use crate::dense::{scale_grid, ScalePlan};
use crate::error::{Error, Result};
use crate::localize::{encode_box, init_regressor, iou, overlap_fraction, regression_target_ok, BBox, Cell, RegressorSpec, WindowGeometry};
use crate::network::{backward, forward, head_ops, run, Op};
use crate::tensor::Tensor;

/// One classifier window: its place in the image and the pooled features under it.
#[derive(Clone, Debug)]
pub struct WindowFeatures {
    pub scale: usize,
    pub cell: Cell,
    pub geometry: WindowGeometry,
    /// Original-image coordinates.
    pub window: BBox,
    /// Pooled maps under the window, channel-major; the first fully-connected layer's input.
    pub features: Vec<f32>,
}

/// Every window of every plan scale for each image, in (scale, Δx, Δy, row, col) order.
pub fn extract_windows(
    spec: &ArchSpec,
    classifier: &WeightStore,
    samples: &[SyntheticSample],
    plan: &ScalePlan,
) -> Result<Vec<Vec<WindowFeatures>>> {
    samples
        .par_iter()
        .map(|s| {
            let (_, h, w) = s.image.chw()?;
            let mut out = Vec::new();
            for (si, row) in plan.rows.iter().enumerate() {
                let grid = scale_grid(&s.image, spec, classifier, row.input, si)?;
                let geometry = WindowGeometry::new(spec, si, row.input, (h, w));
                let (fh, fw) = spec.classifier_input;
                for (dx, col) in grid.maps.iter().enumerate() {
                    for (dy, m) in col.iter().enumerate() {
                        let (_, mh, mw) = m.chw()?;
                        for r in 0..=mh.saturating_sub(fh) {
                            for c in 0..=mw.saturating_sub(fw) {
                                if mh < fh || mw < fw {
                                    continue;
                                }
                                let cell = Cell { row: r, col: c, dy, dx };
                                out.push(WindowFeatures {
                                    scale: si,
                                    cell,
                                    geometry,
                                    window: geometry.window_box(cell),
                                    features: m.crop(r, c, fh, fw)?.into_data(),
                                });
                            }
                        }
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

fn batch_tensor<'a>(rows: impl Iterator<Item = &'a [f32]>, width: usize) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        data.extend_from_slice(r);
        n += 1;
    }
    Tensor::new(vec![n, width], data)
}

/// Regression training pairs of one image: `(window index, head, target)`.
/// Each head takes, per window, the eligible object lying most inside it.
pub fn regression_pairs(windows: &[WindowFeatures], objects: &[(usize, BBox)], reg: &RegressorSpec) -> Vec<(usize, usize, [f32; 4])> {
    let mut out = Vec::new();
    for (wi, w) in windows.iter().enumerate() {
        let mut best: Vec<Option<(f32, [f32; 4])>> = vec![None; reg.heads];
        for (class_id, b) in objects {
            if !regression_target_ok(b, &w.window) {
                continue;
            }
            let head = reg.head_for(*class_id);
            if head >= reg.heads {
                continue;
            }
            let f = overlap_fraction(b, &w.window);
            if best[head].is_none_or(|(bf, _)| f > bf) {
                best[head] = Some((f, encode_box(b, &w.geometry, w.cell)));
            }
        }
        for (head, b) in best.into_iter().enumerate() {
            if let Some((_, t)) = b {
                out.push((wi, head, t));
            }
        }
    }
    out
}

fn regressor_ops() -> Vec<Op> {
    vec![Op::Linear { param: 0 }, Op::Relu, Op::Linear { param: 2 }, Op::Relu, Op::Linear { param: 4 }]
}

/// Zero output weights and per-head mean targets as biases.
fn start_at_mean(store: &mut WeightStore, pairs: &[(usize, usize, usize, [f32; 4])], heads: usize) {
    let mut sum = vec![0.0f64; 4 * heads];
    let mut count = vec![0usize; heads];
    for (_, _, h, t) in pairs {
        count[*h] += 1;
        for k in 0..4 {
            sum[4 * h + k] += t[k] as f64;
        }
    }
    if let Some(w) = store.get_mut("reg3.weight") {
        w.data_mut().fill(0.0);
    }
    if let Some(b) = store.get_mut("reg3.bias") {
        for (i, v) in b.data_mut().iter_mut().enumerate() {
            let n = count[i / 4];
            *v = if n > 0 { (sum[i] / n as f64) as f32 } else { 0.0 };
        }
    }
}

/// Fits the regression head with squared error on window-normalised edges.
/// Only windows holding at least half of an object contribute.
pub fn train_regressor(
    spec: &ArchSpec,
    classifier: &WeightStore,
    windows: &[Vec<WindowFeatures>],
    samples: &[SyntheticSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if classifier.header.steps == 0 {
        return Err(Error::Precondition(
            "regressor training needs trained features; the classifier has never been updated".into(),
        ));
    }
    if windows.len() != samples.len() {
        return Err(Error::invalid("one window list per sample is required"));
    }
    let heads = if cfg.heads > 1 { spec.num_classes } else { 1 };
    let reg = RegressorSpec::for_arch(spec, heads);
    let mut store = init_regressor(spec, heads, cfg.seed, init_scheme(cfg));
    ensure_velocity(&mut store);
    let pairs: Vec<(usize, usize, usize, [f32; 4])> = windows
        .iter()
        .zip(samples)
        .enumerate()
        .flat_map(|(i, (w, s))| regression_pairs(w, &s.objects, &reg).into_iter().map(move |(wi, h, t)| (i, wi, h, t)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::invalid("no window overlaps any object by half; nothing to regress"));
    }
    start_at_mean(&mut store, &pairs, reg.heads);
    let width = spec.classifier_fan_in();
    let ops = regressor_ops();
    let mut trace = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut seeded(cfg.seed, 2, epoch as u64));
        let mut loss_sum = 0.0f64;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let x = batch_tensor(chunk.iter().map(|&p| windows[pairs[p].0][pairs[p].1].features.as_slice()), width)?;
            let params = store.params();
            let (y, tape) = forward(&ops, &params, x, None)?;
            let out_w = 4 * reg.heads;
            let mut g = Tensor::zeros(&[chunk.len(), out_w]);
            let mut batch_loss = 0.0f64;
            for (r, &p) in chunk.iter().enumerate() {
                let (_, _, head, target) = pairs[p];
                for (k, &t) in target.iter().enumerate() {
                    let idx = r * out_w + 4 * head + k;
                    let d = y.data()[idx] - t;
                    batch_loss += (d * d) as f64;
                    g.data_mut()[idx] = 2.0 * d / chunk.len() as f32;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: b,
                    loss: batch_loss as f32,
                });
            }
            loss_sum += batch_loss;
            let grads = backward(&ops, &params, tape, g)?.params;
            apply_update(&mut store, &grads, cfg, epoch)?;
        }
        let stats = EpochStats {
            epoch,
            split: "train".into(),
            loss: loss_sum / pairs.len() as f64,
            accuracy: f64::NAN,
        };
        log::info!("regressor epoch {epoch}: loss {:.5}", stats.loss);
        trace.push(stats);
    }
    Ok(TrainOutcome { weights: store, trace })
}

/// Role of a window in detector training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowLabel {
    Object(usize),
    Background,
    /// Partially covers an object; used neither way.
    Ignore,
}

/// Object if some object has IOU ≥ 0.3 with the window (best IOU wins); background
/// if every object has IOU < 0.1 and lies less than a quarter inside; else ignored.
pub fn detector_label(window: &BBox, objects: &[(usize, BBox)]) -> WindowLabel {
    let mut best: Option<(f32, usize)> = None;
    let mut touches = false;
    for (c, b) in objects {
        let o = iou(window, b);
        if o >= 0.3 && best.is_none_or(|(bo, _)| o > bo) {
            best = Some((o, *c));
        }
        if o >= 0.1 || overlap_fraction(b, window) >= 0.25 {
            touches = true;
        }
    }
    match best {
        Some((_, c)) => WindowLabel::Object(c),
        None if touches => WindowLabel::Ignore,
        None => WindowLabel::Background,
    }
}

/// Classifier weights extended with a background output (last class), initialised to zero.
pub fn init_detector(spec: &ArchSpec, classifier: &WeightStore) -> Result<(ArchSpec, WeightStore)> {
    if classifier.arch_spec()? != *spec {
        return Err(Error::Precondition("classifier weights do not match the architecture".into()));
    }
    let det_spec = spec.clone().with_num_classes(spec.num_classes + 1);
    let shapes = det_spec.param_shapes();
    let params = classifier.params();
    let mut tensors = Vec::with_capacity(shapes.len());
    for ((name, shape), t) in shapes.iter().zip(params) {
        let t = if t.shape() == &shape[..] {
            t.clone()
        } else {
            let mut grown = Tensor::zeros(shape);
            grown.data_mut()[..t.len()].copy_from_slice(t.data());
            grown
        };
        tensors.push((name.clone(), t));
    }
    let header = StoreHeader {
        kind: StoreKind::Detector,
        arch: det_spec.name().to_string(),
        num_classes: det_spec.num_classes,
        scale_factor: det_spec.scale_factor,
        heads: 0,
        steps: 0,
    };
    Ok((det_spec, WeightStore::new(header, tensors)))
}

/// Row-wise softmax cross-entropy for an `n × k` logit batch.
fn batch_cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, Tensor, usize) {
    let k = logits.shape()[1];
    let mut g = logits.clone();
    let mut loss = 0.0f64;
    let mut correct = 0;
    let n = labels.len() as f32;
    for (row, &label) in g.data_mut().chunks_mut(k).zip(labels) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let argmax = row.iter().position(|&v| v == m).unwrap_or(0);
        correct += (argmax == label) as usize;
        let mut z = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
        loss -= (row[label].max(1e-30) as f64).ln();
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    (loss, g, correct)
}

/// Highest object score (any class but the last) per row of a logit batch.
fn object_scores(logits: &Tensor) -> Vec<f32> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let z: f32 = row.iter().map(|v| (v - m).exp()).sum();
            row[..k - 1].iter().map(|v| (v - m).exp() / z).fold(0.0, f32::max)
        })
        .collect()
}

/// Picks `n` negatives: uniformly at random, or the `n` with the highest object
/// score (ties by position).
pub fn select_negatives<R: Rng + ?Sized>(scores: Option<&[f32]>, candidates: usize, n: usize, rng: &mut R) -> Vec<usize> {
    match scores {
        None => {
            let mut idx: Vec<usize> = (0..candidates).collect();
            idx.shuffle(rng);
            idx.truncate(n);
            idx
        }
        Some(s) => {
            let mut idx: Vec<usize> = (0..candidates).collect();
            idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
            idx.truncate(n);
            idx
        }
    }
}

/// Fine-tunes the fully-connected stack with a background class, choosing each
/// image's negatives on the fly from the current model. Feature layers stay fixed.
pub fn train_detector(
    spec: &ArchSpec,
    classifier: &WeightStore,
    windows: &[Vec<WindowFeatures>],
    samples: &[SyntheticSample],
    cfg: &TrainConfig,
    mode: NegativeMode,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if windows.len() != samples.len() {
        return Err(Error::invalid("one window list per sample is required"));
    }
    let (det_spec, mut store) = init_detector(spec, classifier)?;
    ensure_velocity(&mut store);
    let background = spec.num_classes;
    let ops = head_ops(&det_spec, cfg.dropout_rate);
    let infer_ops = head_ops(&det_spec, 0.0);
    let width = det_spec.classifier_fan_in();
    let labels: Vec<Vec<WindowLabel>> = windows
        .iter()
        .zip(samples)
        .map(|(ws, s)| ws.iter().map(|w| detector_label(&w.window, &s.objects)).collect())
        .collect();
    let mut trace = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut seeded(cfg.seed, 3, epoch as u64));
        let mut pending: Vec<(usize, usize, usize)> = Vec::new();
        let (mut loss_sum, mut seen, mut correct, mut step) = (0.0f64, 0usize, 0usize, 0usize);
        let mut flush = |store: &mut WeightStore, batch: &[(usize, usize, usize)]| -> Result<()> {
            let x = batch_tensor(batch.iter().map(|&(i, w, _)| windows[i][w].features.as_slice()), width)?;
            let ys: Vec<usize> = batch.iter().map(|b| b.2).collect();
            let params = store.params();
            let mut rng = seeded(cfg.seed, 4, store.header.steps);
            let (logits, tape) = forward(&ops, &params, x, Some(&mut rng))?;
            let (loss, g, hits) = batch_cross_entropy(&logits, &ys);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: loss as f32,
                });
            }
            let grads = backward(&ops, &params, tape, g)?.params;
            drop(params);
            apply_update(store, &reduce_grads(vec![grads], 1), cfg, epoch)?;
            loss_sum += loss;
            seen += batch.len();
            correct += hits;
            step += 1;
            Ok(())
        };
        for &i in &order {
            let negatives: Vec<usize> = (0..windows[i].len())
                .filter(|&w| labels[i][w] == WindowLabel::Background)
                .collect();
            let mut rng = seeded(cfg.seed, 5 + epoch as u64, i as u64);
            let picked = match mode {
                NegativeMode::Random => select_negatives(None, negatives.len(), cfg.negatives_per_image, &mut rng),
                NegativeMode::Hardest if negatives.is_empty() => Vec::new(),
                NegativeMode::Hardest => {
                    let x = batch_tensor(negatives.iter().map(|&w| windows[i][w].features.as_slice()), width)?;
                    let logits = run(&infer_ops, &store.params(), x)?;
                    let scores = object_scores(&logits);
                    select_negatives(Some(&scores), negatives.len(), cfg.negatives_per_image, &mut rng)
                }
            };
            for (w, l) in labels[i].iter().enumerate() {
                if let WindowLabel::Object(c) = l {
                    pending.push((i, w, *c));
                }
            }
            pending.extend(picked.into_iter().map(|k| (i, negatives[k], background)));
            while pending.len() >= cfg.batch {
                let batch: Vec<_> = pending.drain(..cfg.batch).collect();
                flush(&mut store, &batch)?;
            }
        }
        if !pending.is_empty() {
            let batch = std::mem::take(&mut pending);
            flush(&mut store, &batch)?;
        }
        if seen > 0 {
            let stats = EpochStats {
                epoch,
                split: "train".into(),
                loss: loss_sum / seen as f64,
                accuracy: correct as f64 / seen as f64,
            };
            log::info!("detector epoch {epoch}: loss {:.4} accuracy {:.3}", stats.loss, stats.accuracy);
            trace.push(stats);
        }
    }
    Ok(TrainOutcome { weights: store, trace })
}
