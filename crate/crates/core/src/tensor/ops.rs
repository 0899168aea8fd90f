use rand::Rng;

use super::conv::gemm;
use super::Tensor;
use crate::error::{Error, Result};

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = v.max(0.0);
    }
    out
}

/// Subgradient at exactly zero is zero.
pub fn relu_backward(input: &Tensor, grad_output: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_output.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("{:?} vs {:?}", input.shape(), grad_output.shape()),
        ));
    }
    let mut g = grad_output.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

/// Gradients of [`linear`].
#[derive(Clone, Debug)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Vec<f32>,
}

fn linear_dims(op: &'static str, input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize)> {
    let [out_f, in_f] = weight.shape()[..] else {
        return Err(Error::shape(op, format!("weight must be rank 2, got {:?}", weight.shape())));
    };
    // A rank-2 input whose rows match the fan-in is a batch; anything else is flattened.
    let rows = match input.shape() {
        [n, f] if *f == in_f => *n,
        _ if input.len() == in_f => 1,
        s => {
            return Err(Error::shape(
                op,
                format!("input {s:?} does not flatten to {in_f} features"),
            ))
        }
    };
    Ok((rows, in_f, out_f))
}

/// `y = W·x + b` for a flattened input, or row-wise for an `n × in` batch.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let (rows, in_f, out_f) = linear_dims("linear", input, weight)?;
    if bias.len() != out_f {
        return Err(Error::shape(
            "linear",
            format!("bias has {} entries for {out_f} outputs", bias.len()),
        ));
    }
    let mut out = vec![0.0f32; rows * out_f];
    // Y[n × out] = X[n × in] · Wᵀ
    gemm(rows, in_f, out_f, input.data(), (in_f, 1), weight.data(), (1, in_f), &mut out);
    for row in out.chunks_mut(out_f) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    let shape = if input.rank() == 2 && rows == input.shape()[0] && input.shape()[1] == in_f {
        vec![rows, out_f]
    } else {
        vec![out_f]
    };
    Tensor::new(shape, out)
}

pub fn linear_backward(input: &Tensor, weight: &Tensor, grad_output: &Tensor) -> Result<LinearGrads> {
    let (rows, in_f, out_f) = linear_dims("linear_backward", input, weight)?;
    if grad_output.len() != rows * out_f {
        return Err(Error::shape(
            "linear_backward",
            format!("grad_output {:?} for {rows}x{out_f} output", grad_output.shape()),
        ));
    }
    let go = grad_output.data();
    let mut bias = vec![0.0f32; out_f];
    for row in go.chunks(out_f) {
        for (b, g) in bias.iter_mut().zip(row) {
            *b += g;
        }
    }
    let mut gw = vec![0.0f32; out_f * in_f];
    // dW[out × in] = dYᵀ · X
    gemm(out_f, rows, in_f, go, (1, out_f), input.data(), (in_f, 1), &mut gw);
    let mut gx = vec![0.0f32; rows * in_f];
    // dX[n × in] = dY · W
    gemm(rows, out_f, in_f, go, (out_f, 1), weight.data(), (in_f, 1), &mut gx);
    Ok(LinearGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
        bias,
    })
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)`, so inference is the identity.
///
/// Returns the masked tensor and the per-unit multiplier applied.
pub fn dropout<R: Rng + ?Sized>(input: &Tensor, rate: f32, rng: &mut R) -> Result<(Tensor, Vec<f32>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 {
        return Ok((input.clone(), vec![1.0; input.len()]));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f32> = (0..input.len())
        .map(|_| if rng.gen::<f32>() < rate { 0.0 } else { keep })
        .collect();
    let mut out = input.clone();
    for (v, m) in out.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((out, mask))
}

pub fn dropout_backward(grad_output: &Tensor, mask: &[f32]) -> Result<Tensor> {
    if grad_output.len() != mask.len() {
        return Err(Error::shape(
            "dropout_backward",
            format!("{} gradients for {} mask entries", grad_output.len(), mask.len()),
        ));
    }
    let mut g = grad_output.clone();
    for (v, m) in g.data_mut().iter_mut().zip(mask) {
        *v *= m;
    }
    Ok(g)
}

/// Softmax over a vector, or over the channel axis at every location of a CHW map.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    let mut out = input.clone();
    match *input.shape() {
        [_] => softmax_strided(out.data_mut(), 0, 1, input.len()),
        [c, h, w] => {
            let plane = h * w;
            for loc in 0..plane {
                softmax_strided(out.data_mut(), loc, plane, c);
            }
        }
        _ => {
            return Err(Error::shape(
                "softmax",
                format!("expected rank 1 or 3, got {:?}", input.shape()),
            ))
        }
    }
    Ok(out)
}

fn softmax_strided(data: &mut [f32], start: usize, stride: usize, n: usize) {
    let idx = |i: usize| start + i * stride;
    let max = (0..n).map(|i| data[idx(i)]).fold(f32::NEG_INFINITY, f32::max);
    let mut total = 0.0f32;
    for i in 0..n {
        let e = (data[idx(i)] - max).exp();
        data[idx(i)] = e;
        total += e;
    }
    for i in 0..n {
        data[idx(i)] /= total;
    }
}
