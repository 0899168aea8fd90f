//! Dense `f32` tensors and the primitive layers built on them.
//!
//! Feature maps are stored channels × height × width, filter banks
//! out_channels × in_channels × kh × kw, both row-major. Every layer has a
//! forward and a hand-written backward; there is no autodiff graph.

mod conv;
mod ops;
mod pool;

pub use conv::{conv2d, conv2d_backward, Conv2dGrads};
pub(crate) use conv::conv2d_view;
pub use ops::{
    dropout, dropout_backward, linear, linear_backward, relu, relu_backward, softmax,
    LinearGrads,
};
pub use pool::{maxpool, maxpool_backward, PoolResult};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::invalid(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Panics if any dimension is zero.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "tensor dimensions must be positive, got {shape:?}"
        );
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(
                "chw",
                format!("expected a rank-3 tensor, got {:?}", self.shape),
            )),
        }
    }

    pub fn at3(&self, c: usize, y: usize, x: usize) -> f32 {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    /// Copies the `h × w` spatial window at `(y, x)` of a CHW tensor.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Tensor> {
        let (c, ih, iw) = self.chw()?;
        if h == 0 || w == 0 || y + h > ih || x + w > iw {
            return Err(Error::InputTooSmall(format!(
                "crop {h}x{w} at ({y},{x}) exceeds {ih}x{iw}"
            )));
        }
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for row in y..y + h {
                let base = (ch * ih + row) * iw;
                out.extend_from_slice(&self.data[base + x..base + x + w]);
            }
        }
        Tensor::new(vec![c, h, w], out)
    }

    /// Mirrors a CHW tensor left to right.
    pub fn flip_horizontal(&self) -> Result<Tensor> {
        let (_, _, w) = self.chw()?;
        let mut out = self.clone();
        for row in out.data.chunks_mut(w) {
            row.reverse();
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().sum()
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f32) {
        for v in &mut self.data {
            *v *= k;
        }
    }
}

/// Zero padding added around the two spatial axes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const NONE: Padding = Padding {
        top: 0,
        bottom: 0,
        left: 0,
        right: 0,
    };

    pub fn uniform(p: usize) -> Self {
        Padding {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }
}

/// `floor((extent - window) / stride) + 1`, or `None` when the window does not fit.
pub fn sliding_extent(extent: usize, window: usize, stride: usize) -> Option<usize> {
    if stride == 0 || window == 0 || extent < window {
        None
    } else {
        Some((extent - window) / stride + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
    }

    #[test]
    fn crop_and_flip() {
        let t = Tensor::from_fn(&[1, 3, 4], |i| i as f32);
        let c = t.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.data(), &[5.0, 6.0, 9.0, 10.0]);
        let f = t.flip_horizontal().unwrap();
        assert_eq!(&f.data()[..4], &[3.0, 2.0, 1.0, 0.0]);
        assert_eq!(f.flip_horizontal().unwrap(), t);
        assert!(t.crop(2, 0, 2, 2).is_err());
    }
}
