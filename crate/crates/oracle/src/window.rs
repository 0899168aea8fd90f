use slidenet::arch::{ArchSpec, Stage};
use slidenet::{Tensor, WeightStore};

use crate::naive::{naive_linear, Map};
use crate::OracleError;

/// One classifier window of a dense output map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    /// Top-left corner `(y, x)` in scale-input pixels.
    pub origin: (usize, usize),
    pub extent: (usize, usize),
    pub scale: usize,
    /// Pooling offset `(Δy, Δx)`.
    pub delta: (usize, usize),
    /// Pooled-grid position `(row, col)` at that offset.
    pub cell: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowEnumeration {
    pub input: (usize, usize),
    /// Input pixels per step of the top unpooled maps.
    pub step: usize,
    pub windows: Vec<Window>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowOutput {
    pub window: Window,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub regression: Option<Vec<f64>>,
}

struct ConvStage {
    weight: Vec<f64>,
    bias: Vec<f64>,
    out_c: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    /// `(top, bottom, left, right)`.
    pad: (usize, usize, usize, usize),
    pool: Option<((usize, usize), (usize, usize))>,
}

fn conv_stages(spec: &ArchSpec, weights: Option<&WeightStore>) -> Result<(Vec<ConvStage>, usize), OracleError> {
    let conv: Vec<_> = spec.layers.iter().filter(|l| l.stage != Stage::Full).collect();
    let mut stages = Vec::new();
    let mut final_pool = 1;
    for (i, l) in conv.iter().enumerate() {
        let kernel = l.filter.ok_or_else(|| OracleError::Shape(format!("layer {} has no filter", l.index)))?;
        let pool = match (l.stage, l.pool) {
            (Stage::ConvMax, Some(q)) => Some((q, l.pool_stride.unwrap_or(q))),
            _ => None,
        };
        let last = i + 1 == conv.len();
        if last {
            final_pool = pool.map_or(1, |(q, _)| q.0);
        }
        let z = l.zero_pad.unwrap_or_default();
        let (weight, bias) = match weights {
            Some(w) => (fetch(w, &format!("layer{}.weight", l.index))?, fetch(w, &format!("layer{}.bias", l.index))?),
            None => (Vec::new(), Vec::new()),
        };
        stages.push(ConvStage {
            weight,
            bias,
            out_c: l.channels,
            kernel,
            stride: l.conv_stride.unwrap_or((1, 1)),
            pad: (z.top, z.bottom, z.left, z.right),
            pool: if last { None } else { pool },
        });
    }
    Ok((stages, final_pool))
}

fn fetch(store: &WeightStore, name: &str) -> Result<Vec<f64>, OracleError> {
    store
        .tensors()
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t.data().iter().map(|&v| v as f64).collect())
        .ok_or_else(|| OracleError::MissingWeight(name.to_string()))
}

/// Extents `(h, w)` entering each stage and, last, of the top unpooled maps.
fn extents(stages: &[ConvStage], input: (usize, usize)) -> Option<Vec<(usize, usize)>> {
    let mut cur = input;
    let mut out = vec![cur];
    for s in stages {
        let ph = cur.0 + s.pad.0 + s.pad.1;
        let pw = cur.1 + s.pad.2 + s.pad.3;
        cur = ((ph.checked_sub(s.kernel.0)?) / s.stride.0 + 1, (pw.checked_sub(s.kernel.1)?) / s.stride.1 + 1);
        if let Some((q, qs)) = s.pool {
            cur = ((cur.0.checked_sub(q.0)?) / qs.0 + 1, (cur.1.checked_sub(q.1)?) / qs.1 + 1);
        }
        out.push(cur);
    }
    Some(out)
}

/// Every window the sliding classifier visits at `input`: origins step by the
/// top-map stride (fine) or by that stride times the final pool (coarse), and a
/// window exists wherever its whole pooled field lies inside the top maps.
pub fn enumerate_windows(spec: &ArchSpec, input: (usize, usize), scale: usize, fine: bool) -> WindowEnumeration {
    let (stages, p) = conv_stages(spec, None).expect("architecture without filters");
    let step: usize = stages
        .iter()
        .map(|s| s.stride.0 * s.pool.map_or(1, |(_, qs)| qs.0))
        .product();
    let mut windows = Vec::new();
    if let Some(ext) = extents(&stages, input) {
        let top = *ext.last().unwrap();
        let (fh, fw) = spec.classifier_input;
        let jump = if fine { 1 } else { p };
        let mut uy = 0;
        while uy + p * fh <= top.0 {
            let mut ux = 0;
            while ux + p * fw <= top.1 {
                windows.push(Window {
                    origin: (uy * step, ux * step),
                    extent: spec.train_input,
                    scale,
                    delta: (uy % p, ux % p),
                    cell: (uy / p, ux / p),
                });
                ux += jump;
            }
            uy += jump;
        }
    }
    WindowEnumeration { input, step, windows }
}

/// A map known only on rows `y0..y0+h`, cols `x0..x0+w` of a larger global map.
struct Region {
    map: Map,
    y0: usize,
    x0: usize,
    global: (usize, usize),
}

impl Region {
    /// Zero outside the global map (padding); the caller guarantees coverage otherwise.
    fn read(&self, c: usize, y: isize, x: isize) -> f64 {
        if y < 0 || x < 0 || y >= self.global.0 as isize || x >= self.global.1 as isize {
            return 0.0;
        }
        let (ly, lx) = (y as usize - self.y0, x as usize - self.x0);
        assert!(ly < self.map.h && lx < self.map.w, "dependency region too small");
        self.map.at(c, ly, lx)
    }
}

/// Convolution plus ReLU over output rows `rows` and cols `cols` of one stage,
/// read through a zero-padded copy of the input region.
fn conv_region(region: &Region, s: &ConvStage, rows: (usize, usize), cols: (usize, usize)) -> Map {
    let in_c = region.map.c;
    let (kh, kw) = s.kernel;
    let (sy, sx) = s.stride;
    let (oh, ow) = (rows.1 - rows.0, cols.1 - cols.0);
    let (iy0, ix0) = ((rows.0 * sy) as isize - s.pad.0 as isize, (cols.0 * sx) as isize - s.pad.2 as isize);
    let (ph, pw) = ((oh - 1) * sy + kh, (ow - 1) * sx + kw);
    let mut padded = Map::zeros(in_c, ph, pw);
    for c in 0..in_c {
        for y in 0..ph {
            for x in 0..pw {
                padded.set(c, y, x, region.read(c, iy0 + y as isize, ix0 + x as isize));
            }
        }
    }
    let mut out = Map::zeros(s.out_c, oh, ow);
    if (sy, sx) == (1, 1) {
        // Output rows at the padded width: each tap is one contiguous axpy.
        let span = (oh - 1) * pw + ow;
        let mut wide = vec![0.0; span];
        for o in 0..s.out_c {
            wide.iter_mut().for_each(|v| *v = s.bias[o]);
            for ic in 0..in_c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let w = s.weight[((o * in_c + ic) * kh + ky) * kw + kx];
                        let start = (ic * ph + ky) * pw + kx;
                        let src = &padded.data[start..start + span];
                        wide.iter_mut().zip(src).for_each(|(d, v)| *d += w * v);
                    }
                }
            }
            for oy in 0..oh {
                for ox in 0..ow {
                    out.data[(o * oh + oy) * ow + ox] = wide[oy * pw + ox].max(0.0);
                }
            }
        }
        return out;
    }
    for o in 0..s.out_c {
        let plane = &mut out.data[o * oh * ow..(o + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = s.bias[o]);
        for ic in 0..in_c {
            for ky in 0..kh {
                for kx in 0..kw {
                    let w = s.weight[((o * in_c + ic) * kh + ky) * kw + kx];
                    for oy in 0..oh {
                        let start = (ic * ph + oy * sy + ky) * pw + kx;
                        let src = &padded.data[start..start + (ow - 1) * sx + 1];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        if sx == 1 {
                            dst.iter_mut().zip(src).for_each(|(d, v)| *d += w * v);
                        } else {
                            dst.iter_mut().zip(src.iter().step_by(sx)).for_each(|(d, v)| *d += w * v);
                        }
                    }
                }
            }
        }
        plane.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    out
}

type Range2 = ((usize, usize), (usize, usize));

/// Runs the network over exactly the cells the window's output depends on,
/// including padding-layer halos, then the fully-connected heads.
pub fn naive_window_forward(
    input: &Tensor,
    spec: &ArchSpec,
    weights: &WeightStore,
    regressor: Option<&WeightStore>,
    enumeration: &WindowEnumeration,
) -> Result<Vec<WindowOutput>, OracleError> {
    let image = Map::from_tensor(input);
    let (stages, p) = conv_stages(spec, Some(weights))?;
    let ext = extents(&stages, (image.h, image.w)).ok_or_else(|| OracleError::Shape("input too small".into()))?;
    let full: Vec<_> = spec.layers.iter().filter(|l| l.stage == Stage::Full).collect();
    let fc: Vec<(Vec<f64>, Vec<f64>)> = full
        .iter()
        .map(|l| Ok((fetch(weights, &format!("layer{}.weight", l.index))?, fetch(weights, &format!("layer{}.bias", l.index))?)))
        .collect::<Result<_, OracleError>>()?;
    let reg: Option<Vec<(Vec<f64>, Vec<f64>)>> = regressor
        .map(|r| {
            (1..=3)
                .map(|i| Ok((fetch(r, &format!("reg{i}.weight"))?, fetch(r, &format!("reg{i}.bias"))?)))
                .collect::<Result<_, OracleError>>()
        })
        .transpose()?;
    let (fh, fw) = spec.classifier_input;
    let mut out = Vec::with_capacity(enumeration.windows.len());
    for win in &enumeration.windows {
        let (y, x) = win.origin;
        if y + win.extent.0 > image.h || x + win.extent.1 > image.w {
            return Err(OracleError::OutOfBounds {
                y,
                x,
                h: win.extent.0,
                w: win.extent.1,
                ih: image.h,
                iw: image.w,
            });
        }
        let (uy, ux) = (y / enumeration.step, x / enumeration.step);
        // Rows/cols needed at the output of every stage, walking down from the top.
        let mut need: Vec<Range2> = vec![((0, 0), (0, 0)); stages.len()];
        let mut cur: Range2 = ((uy, uy + p * fh), (ux, ux + p * fw));
        for (i, s) in stages.iter().enumerate().rev() {
            need[i] = cur;
            let ((a, b), (c, d)) = cur;
            let ((a, b), (c, d)) = match s.pool {
                Some((q, qs)) => ((a * qs.0, (b - 1) * qs.0 + q.0), (c * qs.1, (d - 1) * qs.1 + q.1)),
                None => ((a, b), (c, d)),
            };
            let back = |lo: usize, hi: usize, st: usize, pad: usize, k: usize, limit: usize| {
                let lo = (lo * st).saturating_sub(pad);
                let hi = ((hi - 1) * st + k).saturating_sub(pad).min(limit);
                (lo, hi)
            };
            cur = (back(a, b, s.stride.0, s.pad.0, s.kernel.0, ext[i].0), back(c, d, s.stride.1, s.pad.2, s.kernel.1, ext[i].1));
        }
        let ((ry0, ry1), (rx0, rx1)) = cur;
        let mut crop = Map::zeros(image.c, ry1 - ry0, rx1 - rx0);
        for c in 0..image.c {
            for yy in ry0..ry1 {
                for xx in rx0..rx1 {
                    crop.set(c, yy - ry0, xx - rx0, image.at(c, yy, xx));
                }
            }
        }
        let mut region = Region {
            map: crop,
            y0: ry0,
            x0: rx0,
            global: ext[0],
        };
        for (i, s) in stages.iter().enumerate() {
            let ((a, b), (c, d)) = need[i];
            let (conv_rows, conv_cols) = match s.pool {
                Some((q, qs)) => ((a * qs.0, (b - 1) * qs.0 + q.0), (c * qs.1, (d - 1) * qs.1 + q.1)),
                None => ((a, b), (c, d)),
            };
            let conv = conv_region(&region, s, conv_rows, conv_cols);
            let next = match s.pool {
                Some((q, qs)) => {
                    let mut pooled = Map::zeros(s.out_c, b - a, d - c);
                    for ch in 0..s.out_c {
                        for py in a..b {
                            for px in c..d {
                                let mut m = f64::NEG_INFINITY;
                                for i in 0..q.0 {
                                    for j in 0..q.1 {
                                        m = m.max(conv.at(ch, py * qs.0 + i - conv_rows.0, px * qs.1 + j - conv_cols.0));
                                    }
                                }
                                pooled.set(ch, py - a, px - c, m);
                            }
                        }
                    }
                    pooled
                }
                None => conv,
            };
            region = Region {
                map: next,
                y0: a,
                x0: c,
                global: ext[i + 1],
            };
        }
        let top = &region.map;
        let mut features = Vec::with_capacity(top.c * fh * fw);
        for ch in 0..top.c {
            for i in 0..fh {
                for j in 0..fw {
                    let mut m = f64::NEG_INFINITY;
                    for a in 0..p {
                        for b in 0..p {
                            m = m.max(top.at(ch, p * i + a, p * j + b));
                        }
                    }
                    features.push(m);
                }
            }
        }
        let mlp = |layers: &[(Vec<f64>, Vec<f64>)]| {
            let mut h = features.clone();
            for (k, (w, b)) in layers.iter().enumerate() {
                h = naive_linear(&h, w, b);
                if k + 1 < layers.len() {
                    h.iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
            h
        };
        let logits = mlp(&fc);
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
        out.push(WindowOutput {
            window: *win,
            probabilities: logits.iter().map(|v| (v - m).exp() / z).collect(),
            logits,
            regression: reg.as_deref().map(mlp),
        });
    }
    Ok(out)
}
