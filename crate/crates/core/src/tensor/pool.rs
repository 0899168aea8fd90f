use super::{sliding_extent, Tensor};
use crate::error::{Error, Result};

/// Max-pooled map plus, per output cell, the flat input index of its maximum.
#[derive(Clone, Debug)]
pub struct PoolResult {
    pub output: Tensor,
    pub argmax: Vec<usize>,
    pub input_shape: Vec<usize>,
}

/// Max pooling of a CHW tensor whose first window starts at `offset = (oy, ox)`.
///
/// Ties go to the lowest flat input index.
pub fn maxpool(
    input: &Tensor,
    size: (usize, usize),
    stride: (usize, usize),
    offset: (usize, usize),
) -> Result<PoolResult> {
    let (c, h, w) = input.chw()?;
    let (ph, pw) = size;
    let (sy, sx) = stride;
    let (oy, ox) = offset;
    if ph == 0 || pw == 0 || sy == 0 || sx == 0 {
        return Err(Error::invalid("maxpool size and stride must be positive"));
    }
    if oy >= sy || ox >= sx {
        return Err(Error::invalid(format!(
            "maxpool offset ({oy},{ox}) must be smaller than stride ({sy},{sx})"
        )));
    }
    if oy >= h || ox >= w {
        return Err(Error::InputTooSmall(format!(
            "maxpool offset ({oy},{ox}) outside {h}x{w} input"
        )));
    }
    let out_h = sliding_extent(h - oy, ph, sy);
    let out_w = sliding_extent(w - ox, pw, sx);
    let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
        return Err(Error::empty(
            "maxpool",
            format!("{h}x{w} input with offset ({oy},{ox}) cannot hold a {ph}x{pw} window"),
        ));
    };

    let data = input.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    let mut argmax = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let base = ch * h * w;
        for r in 0..out_h {
            for col in 0..out_w {
                let y0 = oy + r * sy;
                let x0 = ox + col * sx;
                let mut best = base + y0 * w + x0;
                let mut best_v = data[best];
                for y in y0..y0 + ph {
                    for x in x0..x0 + pw {
                        let idx = base + y * w + x;
                        if data[idx] > best_v {
                            best_v = data[idx];
                            best = idx;
                        }
                    }
                }
                out.push(best_v);
                argmax.push(best);
            }
        }
    }
    Ok(PoolResult {
        output: Tensor::new(vec![c, out_h, out_w], out)?,
        argmax,
        input_shape: input.shape().to_vec(),
    })
}

/// Routes every output gradient to its recorded argmax, accumulating collisions.
pub fn maxpool_backward(pool: &PoolResult, grad_output: &Tensor) -> Result<Tensor> {
    if grad_output.shape() != pool.output.shape() {
        return Err(Error::shape(
            "maxpool_backward",
            format!(
                "grad_output is {:?}, pooled output is {:?}",
                grad_output.shape(),
                pool.output.shape()
            ),
        ));
    }
    let mut grad = Tensor::zeros(&pool.input_shape);
    let gi = grad.data_mut();
    for (&idx, &g) in pool.argmax.iter().zip(grad_output.data()) {
        gi[idx] += g;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig3_axis_lengths() {
        let x = Tensor::from_fn(&[1, 1, 20], |i| i as f32);
        for d in 0..3 {
            let p = maxpool(&x, (1, 3), (1, 3), (0, d)).unwrap();
            assert_eq!(p.output.shape(), &[1, 1, 6]);
        }
    }

    #[test]
    fn scale_one_extent() {
        let x = Tensor::zeros(&[2, 17, 17]);
        let p = maxpool(&x, (3, 3), (3, 3), (0, 0)).unwrap();
        assert_eq!(p.output.shape(), &[2, 5, 5]);
    }

    #[test]
    fn ramp_picks_last_of_each_run() {
        let x = Tensor::from_fn(&[1, 1, 20], |i| i as f32);
        for d in 0..3 {
            let p = maxpool(&x, (1, 3), (1, 3), (0, d)).unwrap();
            let want: Vec<f32> = (0..6).map(|j| (d + 2 + 3 * j) as f32).collect();
            assert_eq!(p.output.data(), &want[..]);
        }
    }

    #[test]
    fn ties_take_lowest_index() {
        let x = Tensor::filled(&[1, 2, 2], 1.0);
        let p = maxpool(&x, (2, 2), (2, 2), (0, 0)).unwrap();
        assert_eq!(p.argmax, vec![0]);
    }

    #[test]
    fn offset_errors() {
        let x = Tensor::zeros(&[1, 4, 4]);
        assert!(maxpool(&x, (3, 3), (3, 3), (2, 0)).is_err());
        assert!(maxpool(&x, (3, 3), (3, 3), (3, 0)).is_err());
        assert!(maxpool(&x, (3, 3), (3, 3), (1, 1)).is_ok());
    }

    #[test]
    fn backward_routes_to_argmax() {
        let x = Tensor::from_fn(&[1, 4, 4], |i| ((i * 7) % 11) as f32);
        let p = maxpool(&x, (2, 2), (2, 2), (0, 0)).unwrap();
        let mut g = Tensor::zeros(p.output.shape());
        g.data_mut()[1] = 1.0;
        let gi = maxpool_backward(&p, &g).unwrap();
        let nz: Vec<usize> = (0..16).filter(|&i| gi.data()[i] != 0.0).collect();
        assert_eq!(nz, vec![p.argmax[1]]);
        let zero = maxpool_backward(&p, &Tensor::zeros(p.output.shape())).unwrap();
        assert_eq!(zero.sum(), 0.0);
        assert!(maxpool_backward(&p, &Tensor::zeros(&[1, 1, 1])).is_err());
    }
}
