//! Layer sequences built from an [`ArchSpec`], with forward passes for
//! dense inference and a taped forward/backward for training.

use rand::RngCore;

use crate::arch::{ArchSpec, Stage, WeightStore};
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d, conv2d_backward, conv2d_view, dropout, dropout_backward, linear, linear_backward,
    maxpool, maxpool_backward, relu, relu_backward, softmax, Padding, PoolResult, Tensor,
};

/// One step of a sequential network. `param` indexes the weight tensor; its bias follows it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    Conv {
        param: usize,
        stride: (usize, usize),
        pad: Padding,
    },
    Relu,
    Pool {
        size: (usize, usize),
        stride: (usize, usize),
    },
    Linear {
        param: usize,
    },
    Dropout {
        rate: f32,
    },
}

fn weight_index(layer_index: usize) -> usize {
    2 * (layer_index - 1)
}

/// The whole network as used in training: a fixed-size crop in, logits out.
pub fn classifier_ops(spec: &ArchSpec, dropout_rate: f32) -> Vec<Op> {
    let mut ops = conv_ops(spec, true);
    ops.extend(head_ops(spec, dropout_rate));
    ops
}

/// Convolutional stages; `final_pool` controls whether the top maps are pooled.
pub fn conv_ops(spec: &ArchSpec, final_pool: bool) -> Vec<Op> {
    let conv: Vec<_> = spec.conv_layers().collect();
    let mut ops = Vec::new();
    for (i, layer) in conv.iter().enumerate() {
        ops.push(Op::Conv {
            param: weight_index(layer.index),
            stride: layer.conv_stride.unwrap_or((1, 1)),
            pad: layer.padding(),
        });
        ops.push(Op::Relu);
        if let (Stage::ConvMax, Some(size)) = (layer.stage, layer.pool) {
            if final_pool || i + 1 < conv.len() {
                ops.push(Op::Pool {
                    size,
                    stride: layer.pool_stride.unwrap_or(size),
                });
            }
        }
    }
    ops
}

/// Fully-connected stack; dropout follows every hidden layer.
pub fn head_ops(spec: &ArchSpec, dropout_rate: f32) -> Vec<Op> {
    let full: Vec<_> = spec.full_layers().collect();
    let mut ops = Vec::new();
    for (i, layer) in full.iter().enumerate() {
        ops.push(Op::Linear {
            param: weight_index(layer.index),
        });
        if i + 1 < full.len() {
            ops.push(Op::Relu);
            if dropout_rate > 0.0 {
                ops.push(Op::Dropout { rate: dropout_rate });
            }
        }
    }
    ops
}

enum Saved {
    Input(Tensor),
    Pool(PoolResult),
    Mask(Vec<f32>),
    Nothing,
}

/// Intermediate values recorded by [`forward`] for [`backward`].
pub struct Tape {
    saved: Vec<Saved>,
}

/// Runs `ops` on `input`. Dropout is active only when an RNG is supplied.
pub fn forward(
    ops: &[Op],
    params: &[&Tensor],
    input: Tensor,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<(Tensor, Tape)> {
    let mut saved = Vec::with_capacity(ops.len());
    let mut x = input;
    for op in ops {
        let (y, s) = match *op {
            Op::Conv { param, stride, pad } => {
                let y = conv2d(&x, params[param], params[param + 1].data(), stride, pad)?;
                (y, Saved::Input(x))
            }
            Op::Relu => (relu(&x), Saved::Input(x)),
            Op::Pool { size, stride } => {
                let p = maxpool(&x, size, stride, (0, 0))?;
                (p.output.clone(), Saved::Pool(p))
            }
            Op::Linear { param } => {
                let y = linear(&x, params[param], params[param + 1].data())?;
                (y, Saved::Input(x))
            }
            Op::Dropout { rate } => match rng.as_deref_mut() {
                Some(r) => {
                    let (y, mask) = dropout(&x, rate, r)?;
                    (y, Saved::Mask(mask))
                }
                None => (x, Saved::Nothing),
            },
        };
        saved.push(s);
        x = y;
    }
    Ok((x, Tape { saved }))
}

/// Inference-only forward (no tape, no dropout).
pub fn run(ops: &[Op], params: &[&Tensor], input: Tensor) -> Result<Tensor> {
    let mut x = input;
    for op in ops {
        x = match *op {
            Op::Conv { param, stride, pad } => conv2d(&x, params[param], params[param + 1].data(), stride, pad)?,
            Op::Relu => relu(&x),
            Op::Pool { size, stride } => maxpool(&x, size, stride, (0, 0))?.output,
            Op::Linear { param } => linear(&x, params[param], params[param + 1].data())?,
            Op::Dropout { .. } => x,
        };
    }
    Ok(x)
}

/// Gradients for every parameter touched by `ops` (others stay `None`) and for the input.
pub struct Gradients {
    pub params: Vec<Option<Tensor>>,
    pub input: Tensor,
}

pub fn backward(ops: &[Op], params: &[&Tensor], tape: Tape, grad_output: Tensor) -> Result<Gradients> {
    if tape.saved.len() != ops.len() {
        return Err(Error::invalid("tape does not belong to these ops"));
    }
    let mut grads: Vec<Option<Tensor>> = vec![None; params.len()];
    let mut g = grad_output;
    for (op, saved) in ops.iter().zip(tape.saved).rev() {
        g = match (*op, saved) {
            (Op::Conv { param, stride, pad }, Saved::Input(x)) => {
                let cg = conv2d_backward(&x, params[param], &g, stride, pad)?;
                grads[param] = Some(cg.filters);
                grads[param + 1] = Some(Tensor::new(vec![cg.bias.len()], cg.bias)?);
                cg.input
            }
            (Op::Relu, Saved::Input(x)) => relu_backward(&x, &g)?,
            (Op::Pool { .. }, Saved::Pool(p)) => maxpool_backward(&p, &g)?,
            (Op::Linear { param }, Saved::Input(x)) => {
                let lg = linear_backward(&x, params[param], &g)?;
                grads[param] = Some(lg.weight);
                grads[param + 1] = Some(Tensor::new(vec![lg.bias.len()], lg.bias)?);
                lg.input
            }
            (Op::Dropout { .. }, Saved::Mask(mask)) => dropout_backward(&g, &mask)?,
            (Op::Dropout { .. }, Saved::Nothing) => g,
            _ => return Err(Error::invalid("tape entry does not match op")),
        };
    }
    Ok(Gradients { params: grads, input: g })
}

/// Unpooled top convolutional maps for an already prepared input image.
pub fn forward_features(spec: &ArchSpec, weights: &WeightStore, image: &Tensor) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    if c != spec.input_channels {
        return Err(Error::shape(
            "forward_features",
            format!("{} network expects {} input channels, got {c}", spec.name(), spec.input_channels),
        ));
    }
    spec.unpooled_extent((h, w))?;
    run(&conv_ops(spec, false), &weights.params(), image.clone())
}

/// Applies the fully-connected stack at every location of a pooled map, treating
/// the first layer as a `classifier_input`-sized filter bank and the rest as 1×1
/// convolutions. Returns raw scores, `C × (H - h + 1) × (W - w + 1)`.
pub fn dense_head(spec: &ArchSpec, weights: &WeightStore, pooled: &Tensor) -> Result<Tensor> {
    let params = weights.params();
    let (_, h, w) = pooled.chw()?;
    let (fh, fw) = spec.classifier_input;
    if h < fh || w < fw {
        return Err(Error::InputTooSmall(format!(
            "pooled map {h}x{w} is smaller than the {fh}x{fw} classifier field"
        )));
    }
    let full: Vec<_> = spec.full_layers().collect();
    dense_mlp(
        pooled,
        full.iter().map(|l| weight_index(l.index)).collect::<Vec<_>>().as_slice(),
        &params,
        (fh, fw),
    )
}

/// Shared by the classifier and regressor heads: first layer spans `field`, the rest are 1×1.
pub(crate) fn dense_mlp(
    pooled: &Tensor,
    weight_params: &[usize],
    params: &[&Tensor],
    field: (usize, usize),
) -> Result<Tensor> {
    let (in_c, _, _) = pooled.chw()?;
    let mut x = pooled.clone();
    for (i, &p) in weight_params.iter().enumerate() {
        let wt = params[p];
        let [out_f, fan_in] = wt.shape()[..] else {
            return Err(Error::shape("dense_head", format!("weight {:?} is not a matrix", wt.shape())));
        };
        let fshape = if i == 0 {
            if fan_in != in_c * field.0 * field.1 {
                return Err(Error::shape(
                    "dense_head",
                    format!("first layer fan-in {fan_in} != {in_c}x{}x{}", field.0, field.1),
                ));
            }
            [out_f, in_c, field.0, field.1]
        } else {
            [out_f, fan_in, 1, 1]
        };
        x = conv2d_view(&x, wt.data(), &fshape, params[p + 1].data(), (1, 1), Padding::NONE)?;
        if i + 1 < weight_params.len() {
            x = relu(&x);
        }
    }
    Ok(x)
}

/// Softmax class probabilities for one training-size crop, computed non-spatially.
pub fn classify_window(spec: &ArchSpec, weights: &WeightStore, crop: &Tensor) -> Result<Tensor> {
    let logits = run(&classifier_ops(spec, 0.0), &weights.params(), crop.clone())?;
    softmax(&logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_toy, init_weights_with, InitScheme};

    #[test]
    fn ops_layout() {
        let toy = build_toy(4, 16).unwrap();
        let ops = classifier_ops(&toy, 0.5);
        let pools = ops.iter().filter(|o| matches!(o, Op::Pool { .. })).count();
        assert_eq!(pools, 3);
        let drops = ops.iter().filter(|o| matches!(o, Op::Dropout { .. })).count();
        assert_eq!(drops, 2);
        let unpooled = conv_ops(&toy, false);
        assert_eq!(unpooled.iter().filter(|o| matches!(o, Op::Pool { .. })).count(), 2);
    }

    #[test]
    fn dense_head_matches_window_at_training_size() {
        let toy = build_toy(3, 16).unwrap();
        let w = init_weights_with(&toy, 2, InitScheme::FanIn { gain: 1.0 });
        let img = Tensor::from_fn(&[1, 34, 34], |i| ((i * 37) % 101) as f32 / 101.0 - 0.5);
        let feat = forward_features(&toy, &w, &img).unwrap();
        let pooled = maxpool(&feat, (3, 3), (3, 3), (0, 0)).unwrap().output;
        let dense = softmax(&dense_head(&toy, &w, &pooled).unwrap()).unwrap();
        assert_eq!(dense.shape(), &[3, 1, 1]);
        let single = classify_window(&toy, &w, &img).unwrap();
        for c in 0..3 {
            assert!((dense.data()[c] - single.data()[c]).abs() <= 1e-6);
        }
    }
}
