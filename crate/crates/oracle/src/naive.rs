use slidenet::Tensor;

/// Channel-major `f64` feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Map { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let s = t.shape();
        Map {
            c: s[0],
            h: s[1],
            w: s[2],
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }
}

/// Direct six-loop convolution. `weight` is `[out, in, kh, kw]`; `pad` is
/// `(top, bottom, left, right)` zeros.
pub fn naive_conv2d(input: &Map, weight: &[f64], out_c: usize, k: (usize, usize), bias: &[f64], stride: (usize, usize), pad: (usize, usize, usize, usize)) -> Map {
    let (kh, kw) = k;
    let ph = input.h + pad.0 + pad.1;
    let pw = input.w + pad.2 + pad.3;
    let oh = (ph - kh) / stride.0 + 1;
    let ow = (pw - kw) / stride.1 + 1;
    let mut out = Map::zeros(out_c, oh, ow);
    for o in 0..out_c {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = bias[o];
                for c in 0..input.c {
                    for i in 0..kh {
                        for j in 0..kw {
                            let iy = (y * stride.0 + i) as isize - pad.0 as isize;
                            let ix = (x * stride.1 + j) as isize - pad.2 as isize;
                            if iy < 0 || ix < 0 || iy >= input.h as isize || ix >= input.w as isize {
                                continue;
                            }
                            acc += weight[((o * input.c + c) * kh + i) * kw + j] * input.at(c, iy as usize, ix as usize);
                        }
                    }
                }
                out.set(o, y, x, acc);
            }
        }
    }
    out
}

/// Max over `size` windows stepped by `stride`; ragged edges are dropped.
pub fn naive_max_pool(input: &Map, size: (usize, usize), stride: (usize, usize)) -> Map {
    let oh = (input.h - size.0) / stride.0 + 1;
    let ow = (input.w - size.1) / stride.1 + 1;
    let mut out = Map::zeros(input.c, oh, ow);
    for c in 0..input.c {
        for y in 0..oh {
            for x in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for i in 0..size.0 {
                    for j in 0..size.1 {
                        m = m.max(input.at(c, y * stride.0 + i, x * stride.1 + j));
                    }
                }
                out.set(c, y, x, m);
            }
        }
    }
    out
}

/// `weight · x + bias` with `weight` row-major `[out, in]`.
pub fn naive_linear(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    bias.iter()
        .enumerate()
        .map(|(o, b)| b + x.iter().enumerate().map(|(i, v)| weight[o * x.len() + i] * v).sum::<f64>())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_convolution() {
        let input = Map { c: 1, h: 2, w: 2, data: vec![1.0, 2.0, 3.0, 4.0] };
        let out = naive_conv2d(&input, &[1.0, 1.0, 1.0, 1.0], 1, (2, 2), &[0.5], (1, 1), (1, 0, 1, 0));
        assert_eq!((out.h, out.w), (2, 2));
        assert_eq!(out.data, vec![1.5, 3.5, 4.5, 10.5]);
        let p = naive_max_pool(&Map { c: 1, h: 3, w: 3, data: (0..9).map(f64::from).collect() }, (2, 2), (2, 2));
        assert_eq!(p.data, vec![4.0]);
        assert_eq!(naive_linear(&[1.0, 2.0], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0], &[0.0, 0.0, 1.0]), vec![1.0, 2.0, 4.0]);
    }
}
