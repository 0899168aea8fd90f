use std::borrow::Cow;

use super::{sliding_extent, Padding, Tensor};
use crate::error::{Error, Result};

/// Output of [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub filters: Tensor,
    pub bias: Vec<f32>,
}

struct ConvGeometry {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    stride: (usize, usize),
    pad: Padding,
}

impl ConvGeometry {
    fn new(
        input: &Tensor,
        filter_shape: &[usize],
        bias_len: usize,
        stride: (usize, usize),
        pad: Padding,
    ) -> Result<Self> {
        let (in_c, in_h, in_w) = input.chw()?;
        let [out_c, f_c, kh, kw] = filter_shape[..] else {
            return Err(Error::shape(
                "conv2d",
                format!("filters must be rank 4, got {filter_shape:?}"),
            ));
        };
        if f_c != in_c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {in_c} channels but filters expect {f_c}"),
            ));
        }
        if bias_len != out_c {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {bias_len} entries for {out_c} filters"),
            ));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        let ph = in_h + pad.top + pad.bottom;
        let pw = in_w + pad.left + pad.right;
        let out_h = sliding_extent(ph, kh, stride.0);
        let out_w = sliding_extent(pw, kw, stride.1);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(Error::empty(
                "conv2d",
                format!("padded input {ph}x{pw} is smaller than filter {kh}x{kw}"),
            ));
        };
        Ok(ConvGeometry {
            in_c,
            in_h,
            in_w,
            out_c,
            kh,
            kw,
            out_h,
            out_w,
            stride,
            pad,
        })
    }

    fn k(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == (1, 1) && self.pad == Padding::NONE
    }

    /// Input row index for output row `oy` and filter row `ky`, if inside the unpadded input.
    #[inline]
    fn src_y(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy * self.stride.0 + ky)
            .checked_sub(self.pad.top)
            .filter(|&y| y < self.in_h)
    }

    #[inline]
    fn src_x(&self, ox: usize, kx: usize) -> Option<usize> {
        (ox * self.stride.1 + kx)
            .checked_sub(self.pad.left)
            .filter(|&x| x < self.in_w)
    }

    /// Unfolds the input into a `k × p` column matrix.
    fn im2col<'a>(&self, input: &'a [f32]) -> Cow<'a, [f32]> {
        if self.is_pointwise() {
            return Cow::Borrowed(input);
        }
        let p = self.p();
        let mut cols = vec![0.0f32; self.k() * p];
        for c in 0..self.in_c {
            let plane = &input[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * p;
                    for oy in 0..self.out_h {
                        let Some(iy) = self.src_y(oy, ky) else {
                            continue;
                        };
                        let src = &plane[iy * self.in_w..(iy + 1) * self.in_w];
                        let dst = &mut cols[row + oy * self.out_w..row + (oy + 1) * self.out_w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            if let Some(ix) = self.src_x(ox, kx) {
                                *d = src[ix];
                            }
                        }
                    }
                }
            }
        }
        Cow::Owned(cols)
    }

    /// Scatters a `k × p` column gradient back onto the input grid.
    fn col2im(&self, cols: &[f32]) -> Vec<f32> {
        if self.is_pointwise() {
            return cols.to_vec();
        }
        let p = self.p();
        let mut out = vec![0.0f32; self.in_c * self.in_h * self.in_w];
        for c in 0..self.in_c {
            let plane = &mut out[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * p;
                    for oy in 0..self.out_h {
                        let Some(iy) = self.src_y(oy, ky) else {
                            continue;
                        };
                        let src = &cols[row + oy * self.out_w..row + (oy + 1) * self.out_w];
                        for (ox, &g) in src.iter().enumerate() {
                            if let Some(ix) = self.src_x(ox, kx) {
                                plane[iy * self.in_w + ix] += g;
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

const SKINNY: usize = 4;

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f32>() + tail
}

/// Row-major `c = a · b` (`c` is overwritten), with explicit strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].fill(0.0);
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    if m.min(n) <= SKINNY && csa == 1 && (rsb == 1 || n <= SKINNY) {
        let mut column = Vec::new();
        for j in 0..n {
            let bj: &[f32] = if rsb == 1 {
                &b[j * csb..j * csb + k]
            } else {
                column.clear();
                column.extend((0..k).map(|t| b[t * rsb + j * csb]));
                &column
            };
            for i in 0..m {
                c[i * n + j] = dot(&a[i * rsa..i * rsa + k], bj);
            }
        }
        return;
    }
    // SAFETY: the asserts above bound every index sgemm touches in a, b and c.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Valid cross-correlation of a CHW input with an OIHW filter bank.
pub fn conv2d(
    input: &Tensor,
    filters: &Tensor,
    bias: &[f32],
    stride: (usize, usize),
    pad: Padding,
) -> Result<Tensor> {
    conv2d_view(input, filters.data(), filters.shape(), bias, stride, pad)
}

/// [`conv2d`] over a borrowed filter buffer, so a fully-connected weight matrix
/// can be applied as a filter bank without copying it.
pub(crate) fn conv2d_view(
    input: &Tensor,
    filters: &[f32],
    filter_shape: &[usize],
    bias: &[f32],
    stride: (usize, usize),
    pad: Padding,
) -> Result<Tensor> {
    let g = ConvGeometry::new(input, filter_shape, bias.len(), stride, pad)?;
    let (k, p) = (g.k(), g.p());
    if filters.len() != g.out_c * k {
        return Err(Error::shape(
            "conv2d",
            format!("{} filter values for shape {filter_shape:?}", filters.len()),
        ));
    }
    let cols = g.im2col(input.data());
    let mut out = vec![0.0f32; g.out_c * p];
    gemm(g.out_c, k, p, filters, (k, 1), &cols, (p, 1), &mut out);
    for (row, &b) in out.chunks_mut(p).zip(bias) {
        for v in row {
            *v += b;
        }
    }
    Tensor::new(vec![g.out_c, g.out_h, g.out_w], out)
}

pub fn conv2d_backward(
    input: &Tensor,
    filters: &Tensor,
    grad_output: &Tensor,
    stride: (usize, usize),
    pad: Padding,
) -> Result<Conv2dGrads> {
    let out_c = filters.shape().first().copied().unwrap_or(0);
    let g = ConvGeometry::new(input, filters.shape(), out_c, stride, pad)?;
    if grad_output.shape() != [g.out_c, g.out_h, g.out_w] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "grad_output is {:?}, forward output is {:?}",
                grad_output.shape(),
                [g.out_c, g.out_h, g.out_w]
            ),
        ));
    }
    let (k, p) = (g.k(), g.p());
    let go = grad_output.data();

    let bias: Vec<f32> = go.chunks(p).map(|row| row.iter().sum()).collect();

    let cols = g.im2col(input.data());
    let mut grad_filters = vec![0.0f32; g.out_c * k];
    // dW = dY · colsᵀ
    gemm(g.out_c, p, k, go, (p, 1), &cols, (1, p), &mut grad_filters);

    let mut grad_cols = vec![0.0f32; k * p];
    // dcols = Wᵀ · dY
    gemm(k, g.out_c, p, filters.data(), (1, k), go, (p, 1), &mut grad_cols);
    let grad_input = g.col2im(&grad_cols);

    Ok(Conv2dGrads {
        input: Tensor::new(input.shape().to_vec(), grad_input)?,
        filters: Tensor::new(filters.shape().to_vec(), grad_filters)?,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_filter_sums_patch() {
        let x = Tensor::filled(&[1, 3, 3], 1.0);
        let w = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, &[0.0], (1, 1), Padding::NONE).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn stride_two_extent() {
        let x = Tensor::zeros(&[1, 245, 245]);
        let w = Tensor::zeros(&[96, 1, 7, 7]);
        let y = conv2d(&x, &w, &[0.0; 96], (2, 2), Padding::NONE).unwrap();
        assert_eq!(y.shape(), &[96, 120, 120]);
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::zeros(&[2, 5, 5]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        let err = conv2d(&x, &w, &[0.0], (1, 1), Padding::NONE).unwrap_err();
        assert!(err.to_string().contains("2 channels"), "{err}");
        let w = Tensor::zeros(&[1, 2, 7, 7]);
        assert!(matches!(
            conv2d(&x, &w, &[0.0], (1, 1), Padding::NONE),
            Err(Error::EmptyOutput { .. })
        ));
        let w = Tensor::zeros(&[1, 2, 3, 3]);
        assert!(conv2d(&x, &w, &[0.0, 1.0], (1, 1), Padding::NONE).is_err());
    }

    #[test]
    fn backward_identities() {
        let x = Tensor::from_fn(&[1, 3, 3], |i| i as f32 + 1.0);
        let w = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let zero = Tensor::zeros(&[1, 1, 1]);
        let g = conv2d_backward(&x, &w, &zero, (1, 1), Padding::NONE).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.filters.data().iter().all(|&v| v == 0.0));
        assert_eq!(g.bias, vec![0.0]);

        let unit = Tensor::filled(&[1, 1, 1], 1.0);
        let g = conv2d_backward(&x, &w, &unit, (1, 1), Padding::NONE).unwrap();
        assert_eq!(g.filters.data(), x.data());
        assert_eq!(g.bias, vec![1.0]);
        assert!(conv2d_backward(&x, &w, &Tensor::zeros(&[1, 2, 1]), (1, 1), Padding::NONE).is_err());
    }
}
