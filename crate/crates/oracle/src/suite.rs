//! Whole checks shared by the per-crate tests and the acceptance target: the
//! finite-difference gradient suite and dense-versus-naive deviation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slidenet::arch::{init_weights_with, InitScheme};
use slidenet::dense::{apply_classifier, scale_grid, scale_input};
use slidenet::localize::{init_regressor, regress_dense, MergeConfig, Provenance, ScoredBox};
use slidenet::network::{backward, classifier_ops, forward};
use slidenet::tensor::{
    conv2d, conv2d_backward, dropout, dropout_backward, linear, linear_backward, maxpool, maxpool_backward, relu, relu_backward, Padding,
};
use slidenet::train::cross_entropy;
use slidenet::{build_toy, ArchSpec, BBox, Tensor, WeightStore};

use crate::{enumerate_windows, finite_diff, naive_window_forward};

const EPS: f64 = 1e-2;
/// Power of two, so perturbed `f32` weights stay exact; small enough to stay
/// off the ReLU and max-pool kinks of a composed network.
const NETWORK_STEP: f64 = 1.0 / 65536.0;

/// Worst relative error of one operation's backward pass over its instances.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub op: &'static str,
    pub instances: usize,
    pub worst: f64,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0f32..1.0))
}

/// Values at least 0.05 from zero, so a step never crosses a ReLU kink.
fn away_from_zero(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v = r.gen_range(0.05f32..1.0);
        if r.gen() {
            v
        } else {
            -v
        }
    })
}

/// A shuffled ladder of values 0.05 apart: maxima stay put under the step.
fn distinct(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f32> = (0..n).map(|i| i as f32 * 0.05 - n as f32 * 0.025).collect();
    v.shuffle(r);
    Tensor::new(shape.to_vec(), v).expect("ladder shape")
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn from_f64(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), v.iter().map(|&x| x as f32).collect()).expect("same shape")
}

fn as_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`.
pub fn relative_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(&a, n)| (a as f64 - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n.powi(2)).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}

/// Scalar probe `Σ r·y` with fixed random `r`, so every output contributes.
fn projection(y: &Tensor, r: &[f32]) -> f64 {
    y.data().iter().zip(r).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn probe_like(y: &Tensor, r: &mut ChaCha8Rng) -> (Vec<f32>, Tensor) {
    let p: Vec<f32> = (0..y.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
    let t = Tensor::new(y.shape().to_vec(), p.clone()).expect("probe shape");
    (p, t)
}

struct Worst(Vec<GradientCheck>);

impl Worst {
    fn record(&mut self, op: &'static str, e: f64) {
        match self.0.iter_mut().find(|c| c.op == op) {
            Some(c) => {
                c.instances += 1;
                c.worst = c.worst.max(e);
            }
            None => self.0.push(GradientCheck { op, instances: 1, worst: e }),
        }
    }
}

pub fn check_conv2d(instances: u64) -> Vec<GradientCheck> {
    let mut out = Worst(Vec::new());
    for seed in 0..instances {
        let mut r = rng(seed);
        let (c, o) = (r.gen_range(1..4), r.gen_range(1..4));
        let (kh, kw) = (r.gen_range(1..4), r.gen_range(1..4));
        let stride = (r.gen_range(1..3), r.gen_range(1..3));
        let pad = Padding {
            top: r.gen_range(0..2),
            bottom: r.gen_range(0..2),
            left: r.gen_range(0..2),
            right: r.gen_range(0..2),
        };
        let (h, w) = (r.gen_range(kh + 1..kh + 6), r.gen_range(kw + 1..kw + 6));
        let x = uniform(&[c, h, w], &mut r);
        let f = uniform(&[o, c, kh, kw], &mut r);
        let b: Vec<f32> = (0..o).map(|_| r.gen_range(-1.0..1.0)).collect();
        let y = conv2d(&x, &f, &b, stride, pad).expect("conv");
        let (probe, gy) = probe_like(&y, &mut r);
        let g = conv2d_backward(&x, &f, &gy, stride, pad).expect("conv backward");
        let run = |x: &Tensor, f: &Tensor, b: &[f32]| projection(&conv2d(x, f, b, stride, pad).expect("conv"), &probe);
        let nx = finite_diff(|v| run(&from_f64(x.shape(), v), &f, &b), &to_f64(&x), EPS);
        out.record("conv2d input", relative_error(g.input.data(), &nx));
        let nf = finite_diff(|v| run(&x, &from_f64(f.shape(), v), &b), &to_f64(&f), EPS);
        out.record("conv2d filters", relative_error(g.filters.data(), &nf));
        let bb: Vec<f64> = b.iter().map(|&v| v as f64).collect();
        let nb = finite_diff(|v| run(&x, &f, &as_f32(v)), &bb, EPS);
        out.record("conv2d bias", relative_error(&g.bias, &nb));
    }
    out.0
}

pub fn check_linear(instances: u64) -> Vec<GradientCheck> {
    let mut out = Worst(Vec::new());
    for seed in 0..instances {
        let mut r = rng(100 + seed);
        let (n_in, n_out) = (r.gen_range(1..12), r.gen_range(1..8));
        let x = if seed % 2 == 0 {
            uniform(&[n_in], &mut r)
        } else {
            let n = r.gen_range(2..5);
            uniform(&[n, n_in], &mut r)
        };
        let wt = uniform(&[n_out, n_in], &mut r);
        let b: Vec<f32> = (0..n_out).map(|_| r.gen_range(-1.0..1.0)).collect();
        let y = linear(&x, &wt, &b).expect("linear");
        let (probe, gy) = probe_like(&y, &mut r);
        let g = linear_backward(&x, &wt, &gy).expect("linear backward");
        let run = |x: &Tensor, w: &Tensor, b: &[f32]| projection(&linear(x, w, b).expect("linear"), &probe);
        let nx = finite_diff(|v| run(&from_f64(x.shape(), v), &wt, &b), &to_f64(&x), EPS);
        out.record("linear input", relative_error(g.input.data(), &nx));
        let nw = finite_diff(|v| run(&x, &from_f64(wt.shape(), v), &b), &to_f64(&wt), EPS);
        out.record("linear weight", relative_error(g.weight.data(), &nw));
        let bb: Vec<f64> = b.iter().map(|&v| v as f64).collect();
        let nb = finite_diff(|v| run(&x, &wt, &as_f32(v)), &bb, EPS);
        out.record("linear bias", relative_error(&g.bias, &nb));
    }
    out.0
}

pub fn check_relu(instances: u64) -> Vec<GradientCheck> {
    let mut out = Worst(Vec::new());
    for seed in 0..instances {
        let mut r = rng(200 + seed);
        let shape = [r.gen_range(1..4), r.gen_range(1..6), r.gen_range(1..6)];
        let x = away_from_zero(&shape, &mut r);
        let (probe, gy) = probe_like(&x, &mut r);
        let g = relu_backward(&x, &gy).expect("relu backward");
        let n = finite_diff(|v| projection(&relu(&from_f64(x.shape(), v)), &probe), &to_f64(&x), EPS);
        out.record("relu", relative_error(g.data(), &n));
    }
    out.0
}

pub fn check_maxpool(instances: u64) -> Vec<GradientCheck> {
    let mut out = Worst(Vec::new());
    for seed in 0..instances {
        let mut r = rng(300 + seed);
        let size = (r.gen_range(1..4), r.gen_range(1..4));
        let stride = (r.gen_range(1..4), r.gen_range(1..4));
        let offset = (r.gen_range(0..stride.0), r.gen_range(0..stride.1));
        let shape = [r.gen_range(1..3), size.0 + offset.0 + r.gen_range(0..6), size.1 + offset.1 + r.gen_range(0..6)];
        let x = distinct(&shape, &mut r);
        let p = maxpool(&x, size, stride, offset).expect("pool");
        let (probe, gy) = probe_like(&p.output, &mut r);
        let g = maxpool_backward(&p, &gy).expect("pool backward");
        let n = finite_diff(
            |v| projection(&maxpool(&from_f64(x.shape(), v), size, stride, offset).expect("pool").output, &probe),
            &to_f64(&x),
            EPS,
        );
        out.record("maxpool", relative_error(g.data(), &n));
    }
    out.0
}

pub fn check_dropout(instances: u64) -> Vec<GradientCheck> {
    let mut out = Worst(Vec::new());
    for seed in 0..instances {
        let mut r = rng(400 + seed);
        let x = uniform(&[r.gen_range(1..40)], &mut r);
        let rate = r.gen_range(0.0..0.9);
        let (_, mask) = dropout(&x, rate, &mut rng(seed)).expect("dropout");
        let (probe, gy) = probe_like(&x, &mut r);
        let g = dropout_backward(&gy, &mask).expect("dropout backward");
        let n = finite_diff(
            |v| projection(&dropout(&from_f64(x.shape(), v), rate, &mut rng(seed)).expect("dropout").0, &probe),
            &to_f64(&x),
            EPS,
        );
        out.record("dropout", relative_error(g.data(), &n));
    }
    out.0
}

pub fn check_cross_entropy(instances: u64) -> Vec<GradientCheck> {
    let mut out = Worst(Vec::new());
    for seed in 0..instances {
        let mut r = rng(500 + seed);
        let k = r.gen_range(2..10);
        let logits = Tensor::from_fn(&[k], |_| r.gen_range(-3.0f32..3.0));
        let label = r.gen_range(0..k);
        let (_, g, _) = cross_entropy(&logits, label).expect("cross-entropy");
        let n = finite_diff(
            |v| cross_entropy(&from_f64(&[k], v), label).expect("cross-entropy").0 as f64,
            &to_f64(&logits),
            EPS,
        );
        out.record("softmax cross-entropy", relative_error(g.data(), &n));
    }
    out.0
}

/// The composed toy network: each instance picks one parameter tensor and up to
/// 8 of its coordinates, differenced through the `f64` window forward pass.
pub fn check_network(instances: u64) -> Vec<GradientCheck> {
    let mut out = Worst(Vec::new());
    let spec = build_toy(4, 32).expect("toy architecture");
    let ops = classifier_ops(&spec, 0.0);
    let windows = enumerate_windows(&spec, spec.train_input, 0, false);
    for seed in 0..instances {
        let mut r = rng(600 + seed);
        let weights = init_weights_with(&spec, seed, InitScheme::FanIn { gain: 1.0 });
        let x = uniform(&[1, spec.train_input.0, spec.train_input.1], &mut r);
        let label = r.gen_range(0..4);
        let params: Vec<&Tensor> = weights.params();
        let (logits, tape) = forward(&ops, &params, x.clone(), None).expect("forward");
        let (_, g_out, _) = cross_entropy(&logits, label).expect("cross-entropy");
        let grads = backward(&ops, &params, tape, g_out).expect("backward");
        let which = r.gen_range(0..params.len());
        let analytic = grads.params[which].clone().expect("every parameter has a gradient");
        let name = weights.tensors()[which].0.clone();
        let len = params[which].len();
        let coords: Vec<usize> = rand::seq::index::sample(&mut r, len, len.min(8)).into_vec();
        let start: Vec<f64> = coords.iter().map(|&i| params[which].data()[i] as f64).collect();
        let numeric = finite_diff(
            |v| {
                let mut w = weights.clone();
                let t = w.get_mut(&name).expect("tensor by name");
                for (&i, &val) in coords.iter().zip(v) {
                    t.data_mut()[i] = val as f32;
                }
                let out = naive_window_forward(&x, &spec, &w, None, &windows).expect("window forward");
                -out[0].probabilities[label].ln()
            },
            &start,
            NETWORK_STEP,
        );
        let picked: Vec<f32> = coords.iter().map(|&i| analytic.data()[i]).collect();
        out.record("network parameters", relative_error(&picked, &numeric));
    }
    out.0
}

/// Every check above with the same instance count.
pub fn gradient_suite(instances: u64) -> Vec<GradientCheck> {
    [
        check_conv2d,
        check_linear,
        check_relu,
        check_maxpool,
        check_dropout,
        check_cross_entropy,
        check_network,
    ]
    .iter()
    .flat_map(|f| f(instances))
    .collect()
}

/// Fan-in weights with small random biases; under tiny weights every output
/// collapses to near-uniform values and a 1e-5 comparison says nothing.
pub fn random_weights(spec: &ArchSpec, seed: u64) -> WeightStore {
    let mut w = init_weights_with(spec, seed, InitScheme::FanIn { gain: 2f32.sqrt() });
    randomize_biases(&mut w, seed ^ 0x5eed);
    w
}

fn randomize_biases(store: &mut WeightStore, seed: u64) {
    let mut r = rng(seed);
    for (name, t) in store.tensors_mut() {
        if name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v = r.gen_range(-0.1..0.1));
        }
    }
}

/// Outcome of comparing every dense cell at one input size with its naive window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Deviation {
    pub size: (usize, usize),
    pub windows: usize,
    pub dense_cells: usize,
    /// Largest absolute difference over probabilities and regression outputs.
    pub worst: f64,
}

pub fn dense_deviation(spec: &ArchSpec, size: (usize, usize), seed: u64, with_regressor: bool) -> Deviation {
    let weights = random_weights(spec, seed);
    let regressor = with_regressor.then(|| {
        let mut r = init_regressor(spec, 1, seed + 1, InitScheme::FanIn { gain: 1.0 });
        randomize_biases(&mut r, seed ^ 0xb0c5);
        r
    });
    let mut ir = rng(seed + 2);
    let image = Tensor::from_fn(&[3, size.0, size.1], |_| ir.gen::<f32>());
    let grid = scale_grid(&image, spec, &weights, size, 0).expect("dense features");
    let classes = apply_classifier(&grid, &weights, spec).expect("dense classifier");
    let boxes = regressor.as_ref().map(|r| regress_dense(&grid, spec, r).expect("dense regressor"));
    let input = scale_input(&image, spec, size).expect("prepared input");
    let windows = enumerate_windows(spec, size, 0, true);
    let naive = naive_window_forward(&input, spec, &weights, regressor.as_ref(), &windows).expect("naive windows");
    let dense_cells: usize = classes.iter().flatten().map(|m| m.shape()[1] * m.shape()[2]).sum();
    let mut worst = 0.0f64;
    for out in &naive {
        let (dy, dx) = out.window.delta;
        let (row, col) = out.window.cell;
        for (k, p) in out.probabilities.iter().enumerate() {
            worst = worst.max((classes[dx][dy].at3(k, row, col) as f64 - p).abs());
        }
        if let (Some(b), Some(reg)) = (&boxes, &out.regression) {
            for (k, v) in reg.iter().enumerate() {
                worst = worst.max((b[dx][dy].at3(k, row, col) as f64 - v).abs());
            }
        }
    }
    Deviation {
        size,
        windows: naive.len(),
        dense_cells,
        worst,
    }
}

/// A random merge problem of 1–30 boxes on a 64×64 image. Corners sit on the
/// integer grid and confidences are multiples of 1/1024, so every sum and mean
/// the merge forms is exact and results can be compared bit for bit.
pub fn random_merge_instance(seed: u64) -> (Vec<ScoredBox>, MergeConfig) {
    let mut r = rng(seed);
    let n = r.gen_range(1..=30);
    let classes = r.gen_range(1..=3);
    let centres: Vec<(i32, i32)> = (0..r.gen_range(1..=4)).map(|_| (r.gen_range(12..52), r.gen_range(12..52))).collect();
    let boxes = (0..n)
        .map(|i| {
            let (cx, cy) = centres[r.gen_range(0..centres.len())];
            let (x, y) = (cx + r.gen_range(-6..=6), cy + r.gen_range(-6..=6));
            let (hw, hh) = (r.gen_range(4..12), r.gen_range(4..12));
            ScoredBox {
                bbox: BBox::new((x - hw).max(0) as f32, (y - hh).max(0) as f32, (x + hw).min(64) as f32, (y + hh).min(64) as f32),
                class_id: r.gen_range(0..classes),
                confidence: r.gen_range(1..1024) as f64 / 1024.0,
                support: 1,
                provenance: vec![Provenance {
                    scale: r.gen_range(0..2),
                    dx: 0,
                    dy: 0,
                    row: i,
                    col: 0,
                }],
            }
        })
        .collect();
    let t = [0.05, 0.1, 0.2, 0.3, 0.6, 1.0, 2.0][r.gen_range(0..7)];
    (boxes, MergeConfig::new(t, 1, 64.0 * 2f64.sqrt()).expect("valid merge settings"))
}
