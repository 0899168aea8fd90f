//! Multiply-accumulate counts for dense evaluation versus running the network
//! once per window. Counts are analytic, taken from the layer shapes.

use crate::arch::ArchSpec;
use crate::dense::Stride;
use crate::error::{Error, Result};
use crate::tensor::sliding_extent;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub input: (usize, usize),
    /// Classifier windows evaluated (dense output cells).
    pub windows: usize,
    pub dense_macs: u64,
    pub naive_macs: u64,
}

impl CostReport {
    /// Naive over dense; 1 when there is a single window.
    pub fn ratio(&self) -> f64 {
        self.naive_macs as f64 / self.dense_macs as f64
    }
}

/// Classifier windows per pooling offset, `(Δy, Δx, rows, cols)`; offsets with no window are skipped.
pub fn windows_per_offset(spec: &ArchSpec, input: (usize, usize), stride: Stride) -> Result<Vec<(usize, usize, usize, usize)>> {
    let (uh, uw) = spec.unpooled_extent(input)?;
    let p = spec.final_pool;
    let (fh, fw) = spec.classifier_input;
    let offsets = match stride {
        Stride::Fine => p,
        Stride::Coarse => 1,
    };
    let cells = |extent: usize, d: usize, field: usize| {
        extent
            .checked_sub(d)
            .and_then(|e| sliding_extent(e, p, p))
            .and_then(|pooled| sliding_extent(pooled, field, 1))
            .unwrap_or(0)
    };
    let mut out = Vec::new();
    for dy in 0..offsets {
        for dx in 0..offsets {
            let (r, c) = (cells(uh, dy, fh), cells(uw, dx, fw));
            if r > 0 && c > 0 {
                out.push((dy, dx, r, c));
            }
        }
    }
    Ok(out)
}

/// Counts both evaluation strategies at one input size.
pub fn count_costs(spec: &ArchSpec, input: (usize, usize), stride: Stride) -> Result<CostReport> {
    let per_offset = windows_per_offset(spec, input, stride)?;
    let windows: usize = per_offset.iter().map(|&(_, _, r, c)| r * c).sum();
    if windows == 0 {
        return Err(Error::InputTooSmall(format!(
            "{}x{} input holds no {}x{} window",
            input.0, input.1, spec.train_input.0, spec.train_input.1
        )));
    }
    let shapes = spec.param_shapes();
    let trace = spec.trace(input)?;
    let mut conv_macs = 0u64;
    let mut window_fc_macs = 0u64;
    for (layer, (t, w)) in spec.layers.iter().zip(trace.iter().zip(shapes.chunks(2))) {
        let weights: u64 = w[0].1.iter().product::<usize>() as u64;
        if layer.is_conv() {
            conv_macs += weights * (t.conv_output.0 * t.conv_output.1) as u64;
        } else {
            window_fc_macs += weights;
        }
    }
    Ok(CostReport {
        input,
        windows,
        dense_macs: conv_macs + window_fc_macs * windows as u64,
        naive_macs: spec.count_connections() * windows as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_accurate, build_toy};

    #[test]
    fn single_window_costs_the_same() {
        let toy = build_toy(4, 16).unwrap();
        let r = count_costs(&toy, toy.train_input, Stride::Coarse).unwrap();
        assert_eq!(r.windows, 1);
        assert_eq!(r.dense_macs, r.naive_macs);
        let r = count_costs(&toy, toy.train_input, Stride::Fine).unwrap();
        assert_eq!((r.windows, r.dense_macs), (1, r.naive_macs));
    }

    #[test]
    fn fine_windows_match_the_scale_table() {
        let acc = build_accurate();
        let r = count_costs(&acc, (245, 245), Stride::Fine).unwrap();
        assert_eq!(r.windows, 9);
        assert!(r.naive_macs > r.dense_macs);
    }
}
