//! Image plumbing: bilinear resampling, network input preparation and binary
//! P6 pixmaps.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bilinear resampling of a CHW tensor with pixel-centre alignment.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = img.chw()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize target must be non-empty"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f32 / n_out as f32;
        (0..n_out)
            .map(|o| {
                let src = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f32);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, src - lo as f32)
            })
            .collect()
    };
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    let src = img.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Resizes so the smaller side equals `min_dim`, keeping the aspect ratio.
pub fn resize_min_dim(img: &Tensor, min_dim: usize) -> Result<Tensor> {
    let (_, h, w) = img.chw()?;
    let (nh, nw) = if h <= w {
        (min_dim, ((w as f64 * min_dim as f64 / h as f64).round() as usize).max(min_dim))
    } else {
        (((h as f64 * min_dim as f64 / w as f64).round() as usize).max(min_dim), min_dim)
    };
    resize_bilinear(img, nh, nw)
}

/// Maps a `[0, 1]` image to network input: channel conversion and centring at zero.
pub fn prepare_input(img: &Tensor, channels: usize) -> Result<Tensor> {
    let (c, h, w) = img.chw()?;
    let plane = h * w;
    let src = img.data();
    let data: Vec<f32> = match (c, channels) {
        (a, b) if a == b => src.iter().map(|v| v - 0.5).collect(),
        (_, 1) => (0..plane)
            .map(|i| (0..c).map(|ch| src[ch * plane + i]).sum::<f32>() / c as f32 - 0.5)
            .collect(),
        (1, n) => (0..n).flat_map(|_| src.iter().map(|v| v - 0.5)).collect(),
        (a, b) => {
            return Err(Error::shape(
                "prepare_input",
                format!("cannot convert {a}-channel image to {b} channels"),
            ))
        }
    };
    Tensor::new(vec![channels, h, w], data)
}

/// Writes a 3-channel `[0, 1]` image as a binary P6 pixmap.
pub fn write_ppm(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    fs::write(path, encode_ppm(img)?)?;
    Ok(())
}

pub fn encode_ppm(img: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = img.chw()?;
    if c != 3 {
        return Err(Error::shape("write_ppm", format!("P6 needs 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = img.data();
    for i in 0..h * w {
        for ch in 0..3 {
            out.push(to_byte(d[ch * h * w + i]));
        }
    }
    Ok(out)
}

pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path.as_ref())?;
    decode_ppm(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.as_ref().display())),
        other => other,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated P6 header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(Error::Format(format!("expected P6 magic, got `{}`", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad header field `{s}`")));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 || w == 0 || h == 0 {
        return Err(Error::Format(format!("unsupported P6 {w}x{h} maxval {max}")));
    }
    pos += 1;
    let body = &bytes[pos.min(bytes.len())..];
    if body.len() != w * h * 3 {
        return Err(Error::Format(format!(
            "P6 body has {} bytes, expected {}",
            body.len(),
            w * h * 3
        )));
    }
    let mut data = vec![0.0f32; 3 * h * w];
    for i in 0..h * w {
        for ch in 0..3 {
            data[ch * h * w + i] = body[i * 3 + ch] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_constant_and_identity() {
        let img = Tensor::filled(&[2, 5, 7], 0.25);
        let r = resize_bilinear(&img, 9, 3).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
        let x = Tensor::from_fn(&[1, 4, 4], |i| i as f32);
        assert_eq!(resize_bilinear(&x, 4, 4).unwrap(), x);
    }

    #[test]
    fn resize_commutes_with_flip() {
        let x = Tensor::from_fn(&[1, 6, 9], |i| ((i * 13) % 7) as f32);
        let a = resize_bilinear(&x.flip_horizontal().unwrap(), 8, 13).unwrap();
        let b = resize_bilinear(&x, 8, 13).unwrap().flip_horizontal().unwrap();
        assert!(a.max_abs_diff(&b) < 1e-5);
    }

    #[test]
    fn min_dim_resize() {
        let img = Tensor::zeros(&[3, 256, 384]);
        let r = resize_min_dim(&img, 128).unwrap();
        assert_eq!(r.shape(), &[3, 128, 192]);
    }

    #[test]
    fn ppm_round_trip() {
        let img = Tensor::from_fn(&[3, 3, 2], |i| (i * 15) as f32 / 255.0);
        let bytes = encode_ppm(&img).unwrap();
        let back = decode_ppm(&bytes).unwrap();
        assert!(back.max_abs_diff(&img) < 1e-6);
        assert_eq!(encode_ppm(&back).unwrap(), bytes);
        assert!(decode_ppm(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_ppm(b"P5\n1 1\n255\n\0").is_err());
    }

    #[test]
    fn grey_preparation() {
        let img = Tensor::from_fn(&[3, 1, 2], |i| [0.2, 0.4, 0.6, 0.8, 1.0, 0.0][i]);
        let g = prepare_input(&img, 1).unwrap();
        assert_eq!(g.shape(), &[1, 1, 2]);
        assert!((g.data()[0] - (0.6 - 0.5)).abs() < 1e-6);
    }
}
