//! Desk-scale training: SGD with momentum and a step schedule, whole-network
//! classifier training on fixed-size crops, and frozen-feature fine-tuning of
//! the regression and detection heads.

mod config;
mod data;
mod heads;

pub use config::{NegativeMode, TrainConfig};
pub use data::{
    make_synthetic_dataset, make_synthetic_dataset_with, read_dataset, truth_records, write_dataset, BBoxI,
    DatasetOptions, Object, SyntheticSample, SHAPE_NAMES,
};
pub use heads::{
    detector_label, extract_windows, init_detector, regression_pairs, train_detector, train_regressor,
    WindowFeatures, WindowLabel,
};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::arch::{init_weights_with, ArchSpec, InitScheme, StoreKind, WeightStore, VELOCITY_PREFIX};
use crate::error::{Error, Result};
use crate::image::{prepare_input, resize_min_dim};
use crate::network::{backward, classifier_ops, forward, run, Op};
use crate::tensor::{softmax, Tensor};

/// `lr0 · factor^(number of decay epochs ≤ epoch)`.
pub fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f32 {
    let k = cfg.decay_epochs.iter().filter(|&&e| e <= epoch).count();
    cfg.lr0 * cfg.lr_decay_factor.powi(k as i32)
}

/// `v ← μ·v − lr·(g + λ·w)`, then `w ← w + v`.
pub fn sgd_momentum_step(weights: &mut [f32], grads: &[f32], velocity: &mut [f32], cfg: &TrainConfig, epoch: usize) {
    let lr = learning_rate(cfg, epoch);
    let (mu, wd) = (cfg.momentum, cfg.weight_decay);
    for ((w, g), v) in weights.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = mu * *v - lr * (g + wd * *w);
        *w += *v;
    }
}

/// Training views of one image: resized so its smaller side is
/// `cfg.resize_min_dim`, then `cfg.crops_per_image` random crops and their mirrors.
pub fn augment<R: Rng + ?Sized>(image: &Tensor, cfg: &TrainConfig, crop: (usize, usize), rng: &mut R) -> Result<Vec<Tensor>> {
    let (_, h, w) = image.chw()?;
    let resized = if h.min(w) == cfg.resize_min_dim {
        image.clone()
    } else {
        resize_min_dim(image, cfg.resize_min_dim)?
    };
    let (_, h, w) = resized.chw()?;
    if h < crop.0 || w < crop.1 {
        return Err(Error::InputTooSmall(format!(
            "{h}x{w} image cannot supply {}x{} crops",
            crop.0, crop.1
        )));
    }
    let mut views = Vec::with_capacity(2 * cfg.crops_per_image);
    for _ in 0..cfg.crops_per_image {
        let y = rng.gen_range(0..=h - crop.0);
        let x = rng.gen_range(0..=w - crop.1);
        let c = resized.crop(y, x, crop.0, crop.1)?;
        views.push(c.flip_horizontal()?);
        views.push(c);
    }
    Ok(views)
}

/// Mean loss and accuracy of one pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters followed by optimiser state; `header.steps` counts updates.
    pub weights: WeightStore,
    pub trace: Vec<EpochStats>,
}

/// Softmax cross-entropy of logits against `label`, with its gradient.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<(f32, Tensor, bool)> {
    let p = softmax(logits)?;
    let d = p.data();
    if label >= d.len() {
        return Err(Error::invalid(format!("label {label} out of range for {} classes", d.len())));
    }
    let loss = if d.iter().all(|v| v.is_finite()) {
        -(d[label].max(1e-30)).ln()
    } else {
        f32::NAN
    };
    let argmax = crate::dense::top_k(d, 1)[0].0;
    let mut g = p.clone();
    g.data_mut()[label] -= 1.0;
    Ok((loss, g, argmax == label))
}

pub(crate) fn seeded(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos((index as u128) << 20);
    rng
}

pub(crate) fn init_scheme(cfg: &TrainConfig) -> InitScheme {
    match cfg.init_gain {
        Some(gain) => InitScheme::FanIn { gain },
        None => InitScheme::Gaussian {
            mean: cfg.init_mean,
            std: cfg.init_std,
        },
    }
}

/// Ensures the store carries a velocity tensor for every parameter.
pub(crate) fn ensure_velocity(store: &mut WeightStore) {
    let names: Vec<(String, Vec<usize>)> = store
        .tensors()
        .iter()
        .filter(|(n, _)| !n.starts_with(VELOCITY_PREFIX))
        .map(|(n, t)| (n.clone(), t.shape().to_vec()))
        .collect();
    for (n, shape) in names {
        let vn = format!("{VELOCITY_PREFIX}{n}");
        if store.get(&vn).is_none() {
            store.push(vn, Tensor::zeros(&shape));
        }
    }
}

/// Applies one update to every parameter that received a gradient.
pub(crate) fn apply_update(store: &mut WeightStore, grads: &[Option<Tensor>], cfg: &TrainConfig, epoch: usize) -> Result<()> {
    let names: Vec<String> = store
        .tensors()
        .iter()
        .filter(|(n, _)| !n.starts_with(VELOCITY_PREFIX))
        .map(|(n, _)| n.clone())
        .collect();
    for (name, g) in names.iter().zip(grads) {
        let Some(g) = g else { continue };
        let mut v = store
            .get(&format!("{VELOCITY_PREFIX}{name}"))
            .cloned()
            .ok_or_else(|| Error::Format(format!("missing velocity for `{name}`")))?;
        let w = store.get_mut(name).expect("parameter present");
        sgd_momentum_step(w.data_mut(), g.data(), v.data_mut(), cfg, epoch);
        if !w.data().iter().all(|x| x.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                step: store.header.steps as usize,
                loss: f32::NAN,
            });
        }
        *store.get_mut(&format!("{VELOCITY_PREFIX}{name}")).expect("velocity present") = v;
    }
    store.header.steps += 1;
    Ok(())
}

/// Sums per-sample gradients in sample order and scales by `1/n`.
pub(crate) fn reduce_grads(per_sample: Vec<Vec<Option<Tensor>>>, n: usize) -> Vec<Option<Tensor>> {
    let mut iter = per_sample.into_iter();
    let mut acc = iter.next().unwrap_or_default();
    for g in iter {
        for (a, b) in acc.iter_mut().zip(g) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.add_assign(&b),
                (None, Some(b)) => *a = Some(b),
                _ => {}
            }
        }
    }
    for t in acc.iter_mut().flatten() {
        t.scale(1.0 / n as f32);
    }
    acc
}

struct View {
    input: Tensor,
    label: usize,
}

fn epoch_views(spec: &ArchSpec, samples: &[(&Tensor, usize)], cfg: &TrainConfig, epoch: usize) -> Result<Vec<View>> {
    let crop = cfg.crop.unwrap_or(spec.train_input);
    let per_image: Vec<Result<Vec<View>>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, (img, label))| {
            let mut rng = seeded(cfg.seed, 1 + epoch as u64, i as u64);
            augment(img, cfg, crop, &mut rng)?
                .into_iter()
                .map(|v| {
                    Ok(View {
                        input: prepare_input(&v, spec.input_channels)?,
                        label: *label,
                    })
                })
                .collect()
        })
        .collect();
    let mut views = Vec::new();
    for v in per_image {
        views.extend(v?);
    }
    let mut rng = seeded(cfg.seed, 0, epoch as u64);
    views.shuffle(&mut rng);
    Ok(views)
}

/// Loss, hit and parameter gradients of one training view.
type ViewGrads = (f32, bool, Vec<Option<Tensor>>);

/// Trains the whole network on fixed-size crops with one label per image.
/// `resume` continues from a saved store (parameters, velocity and step count).
pub fn train_classifier(
    spec: &ArchSpec,
    samples: &[SyntheticSample],
    cfg: &TrainConfig,
    resume: Option<WeightStore>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let labelled: Vec<(&Tensor, usize)> = samples
        .iter()
        .filter_map(|s| s.label().map(|l| (&s.image, l)))
        .collect();
    if labelled.is_empty() {
        return Err(Error::invalid("no labelled images to train on"));
    }
    if let Some(&(_, l)) = labelled.iter().find(|(_, l)| *l >= spec.num_classes) {
        return Err(Error::invalid(format!("label {l} exceeds the {} output classes", spec.num_classes)));
    }
    let mut store = match resume {
        Some(s) => {
            if s.arch_spec()? != *spec {
                return Err(Error::Precondition("resumed weights belong to a different architecture".into()));
            }
            s
        }
        None => init_weights_with(spec, cfg.seed, init_scheme(cfg)),
    };
    ensure_velocity(&mut store);
    let ops = classifier_ops(spec, cfg.dropout_rate);
    let views_per_epoch = labelled.len() * 2 * cfg.crops_per_image;
    let steps_per_epoch = views_per_epoch.div_ceil(cfg.batch) as u64;
    let mut trace = Vec::new();
    let start_epoch = (store.header.steps / steps_per_epoch) as usize;
    for epoch in start_epoch..cfg.epochs {
        let views = epoch_views(spec, &labelled, cfg, epoch)?;
        let skip = (store.header.steps - epoch as u64 * steps_per_epoch) as usize;
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for (b, batch) in views.chunks(cfg.batch).enumerate().skip(skip) {
            let step = store.header.steps;
            let params = store.params();
            let results: Vec<Result<ViewGrads>> = batch
                .par_iter()
                .enumerate()
                .map(|(i, v)| {
                    let mut rng = seeded(cfg.seed, u64::MAX - 1, step * cfg.batch as u64 + i as u64);
                    let (logits, tape) = forward(&ops, &params, v.input.clone(), Some(&mut rng))?;
                    let (loss, g, hit) = cross_entropy(&logits, v.label)?;
                    Ok((loss, hit, backward(&ops, &params, tape, g)?.params))
                })
                .collect();
            let mut grads = Vec::with_capacity(results.len());
            let mut batch_loss = 0.0f64;
            for r in results {
                let (loss, hit, g) = r?;
                batch_loss += loss as f64;
                correct += hit as usize;
                grads.push(g);
            }
            let mean = batch_loss / batch.len() as f64;
            if !mean.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: b,
                    loss: mean as f32,
                });
            }
            loss_sum += batch_loss;
            seen += batch.len();
            let g = reduce_grads(grads, batch.len());
            apply_update(&mut store, &g, cfg, epoch)?;
        }
        if seen > 0 {
            let stats = EpochStats {
                epoch,
                split: "train".into(),
                loss: loss_sum / seen as f64,
                accuracy: correct as f64 / seen as f64,
            };
            log::info!("epoch {epoch}: loss {:.4} accuracy {:.3}", stats.loss, stats.accuracy);
            trace.push(stats);
        }
    }
    store.header.kind = StoreKind::Classifier;
    Ok(TrainOutcome { weights: store, trace })
}

/// Top-1 accuracy of the non-spatial classifier on centre crops.
pub fn classifier_accuracy(spec: &ArchSpec, weights: &WeightStore, samples: &[SyntheticSample]) -> Result<f64> {
    let ops: Vec<Op> = classifier_ops(spec, 0.0);
    let params = weights.params();
    let (th, tw) = spec.train_input;
    let hits: Vec<Result<Option<bool>>> = samples
        .par_iter()
        .map(|s| {
            let Some(label) = s.label() else { return Ok(None) };
            let (_, h, w) = s.image.chw()?;
            if h < th || w < tw {
                return Err(Error::InputTooSmall(format!("{h}x{w} image is smaller than the {th}x{tw} window")));
            }
            let crop = s.image.crop((h - th) / 2, (w - tw) / 2, th, tw)?;
            let logits = run(&ops, &params, prepare_input(&crop, spec.input_channels)?)?;
            Ok(Some(crate::dense::top_k(logits.data(), 1)[0].0 == label))
        })
        .collect();
    let (mut n, mut ok) = (0usize, 0usize);
    for h in hits {
        if let Some(hit) = h? {
            n += 1;
            ok += hit as usize;
        }
    }
    if n == 0 {
        return Err(Error::invalid("no labelled images to evaluate"));
    }
    Ok(ok as f64 / n as f64)
}
