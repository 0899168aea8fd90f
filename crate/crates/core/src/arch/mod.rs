//! Declarative network descriptions and their shape arithmetic.
//!
//! Two fixed topologies (`fast`, `accurate`) and a scaled-down `toy` variant
//! for desk-scale training. Layers are 1-based as in the usual layer tables.

pub(crate) mod weights;

pub use weights::{init_weights, init_weights_with, InitScheme, StoreHeader, StoreKind, WeightStore, VELOCITY_PREFIX};

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{sliding_extent, Padding};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Conv,
    ConvMax,
    Full,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Conv => "conv",
            Stage::ConvMax => "conv + max",
            Stage::Full => "full",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub index: usize,
    pub stage: Stage,
    pub channels: usize,
    pub filter: Option<(usize, usize)>,
    pub conv_stride: Option<(usize, usize)>,
    pub pool: Option<(usize, usize)>,
    pub pool_stride: Option<(usize, usize)>,
    pub zero_pad: Option<Padding>,
}

impl LayerSpec {
    fn conv(index: usize, channels: usize, filter: usize, stride: usize, pad: usize) -> Self {
        LayerSpec {
            index,
            stage: Stage::Conv,
            channels,
            filter: Some((filter, filter)),
            conv_stride: Some((stride, stride)),
            pool: None,
            pool_stride: None,
            zero_pad: (pad > 0).then(|| Padding::uniform(pad)),
        }
    }

    fn conv_max(
        index: usize,
        channels: usize,
        filter: usize,
        stride: usize,
        pad: usize,
        pool: usize,
    ) -> Self {
        LayerSpec {
            stage: Stage::ConvMax,
            pool: Some((pool, pool)),
            pool_stride: Some((pool, pool)),
            ..Self::conv(index, channels, filter, stride, pad)
        }
    }

    fn full(index: usize, channels: usize) -> Self {
        LayerSpec {
            index,
            stage: Stage::Full,
            channels,
            filter: None,
            conv_stride: None,
            pool: None,
            pool_stride: None,
            zero_pad: None,
        }
    }

    pub fn padding(&self) -> Padding {
        self.zero_pad.unwrap_or(Padding::NONE)
    }

    pub fn is_conv(&self) -> bool {
        self.stage != Stage::Full
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArchKind {
    Fast,
    Accurate,
    Toy,
}

impl ArchKind {
    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Fast => "fast",
            ArchKind::Accurate => "accurate",
            ArchKind::Toy => "toy",
        }
    }
}

impl std::str::FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(ArchKind::Fast),
            "accurate" => Ok(ArchKind::Accurate),
            "toy" => Ok(ArchKind::Toy),
            other => Err(Error::invalid(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchSpec {
    pub kind: ArchKind,
    /// Channel divisor relative to the accurate model; 1 for the full-size models.
    pub scale_factor: usize,
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
    pub input_channels: usize,
    pub train_input: (usize, usize),
    /// Spatial extent the first fully-connected layer sees on the pooled top maps.
    pub classifier_input: (usize, usize),
    /// Product of all strides up to the unpooled top feature maps.
    pub feature_downsampling: usize,
    pub final_pool: usize,
}

/// Per-layer spatial extents at one input size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerTrace {
    pub index: usize,
    pub stage: Stage,
    pub input: (usize, usize),
    pub conv_output: (usize, usize),
    pub output: (usize, usize),
}

pub fn build_fast() -> ArchSpec {
    let layers = vec![
        LayerSpec::conv_max(1, 96, 11, 4, 0, 2),
        LayerSpec::conv_max(2, 256, 5, 1, 0, 2),
        LayerSpec::conv(3, 512, 3, 1, 1),
        LayerSpec::conv(4, 1024, 3, 1, 1),
        LayerSpec::conv_max(5, 1024, 3, 1, 1, 2),
        LayerSpec::full(6, 3072),
        LayerSpec::full(7, 4096),
        LayerSpec::full(8, 1000),
    ];
    ArchSpec {
        kind: ArchKind::Fast,
        scale_factor: 1,
        layers,
        num_classes: 1000,
        input_channels: 3,
        train_input: (231, 231),
        classifier_input: (6, 6),
        feature_downsampling: 4 * 2 * 2,
        final_pool: 2,
    }
}

pub fn build_accurate() -> ArchSpec {
    let layers = vec![
        LayerSpec::conv_max(1, 96, 7, 2, 0, 3),
        LayerSpec::conv_max(2, 256, 7, 1, 0, 2),
        LayerSpec::conv(3, 512, 3, 1, 1),
        LayerSpec::conv(4, 512, 3, 1, 1),
        LayerSpec::conv(5, 1024, 3, 1, 1),
        LayerSpec::conv_max(6, 1024, 3, 1, 1, 3),
        LayerSpec::full(7, 4096),
        LayerSpec::full(8, 4096),
        LayerSpec::full(9, 1000),
    ];
    ArchSpec {
        kind: ArchKind::Accurate,
        scale_factor: 1,
        layers,
        num_classes: 1000,
        input_channels: 3,
        train_input: (221, 221),
        classifier_input: (5, 5),
        feature_downsampling: 2 * 3 * 2,
        final_pool: 3,
    }
}

/// The accurate stage sequence with channels divided by `scale_factor`, a
/// single grey input channel, and spatial geometry shrunk to a 34×34 window
/// (7×7 stride-1 first layer, 2×2 early pools, 3×3 final pool, 2×2 classifier field).
pub fn build_toy(num_classes: usize, scale_factor: usize) -> Result<ArchSpec> {
    if num_classes == 0 {
        return Err(Error::invalid("toy architecture needs at least one class"));
    }
    const BASE: [usize; 5] = [96, 256, 512, 1024, 4096];
    if scale_factor == 0 || BASE.iter().any(|c| c % scale_factor != 0) {
        return Err(Error::invalid(format!(
            "scale factor {scale_factor} must divide every channel count {BASE:?}"
        )));
    }
    let ch = |c: usize| c / scale_factor;
    let layers = vec![
        LayerSpec::conv_max(1, ch(96), 7, 1, 0, 2),
        LayerSpec::conv_max(2, ch(256), 3, 1, 0, 2),
        LayerSpec::conv(3, ch(512), 3, 1, 1),
        LayerSpec::conv(4, ch(512), 3, 1, 1),
        LayerSpec::conv(5, ch(1024), 3, 1, 1),
        LayerSpec::conv_max(6, ch(1024), 3, 1, 1, 3),
        LayerSpec::full(7, ch(4096)),
        LayerSpec::full(8, ch(4096)),
        LayerSpec::full(9, num_classes),
    ];
    Ok(ArchSpec {
        kind: ArchKind::Toy,
        scale_factor,
        layers,
        num_classes,
        input_channels: 1,
        train_input: (34, 34),
        classifier_input: (2, 2),
        feature_downsampling: 2 * 2,
        final_pool: 3,
    })
}

impl ArchSpec {
    /// Rebuilds a spec from its name and the two free parameters.
    pub fn from_parts(kind: ArchKind, num_classes: usize, scale_factor: usize) -> Result<Self> {
        let spec = match kind {
            ArchKind::Fast => build_fast(),
            ArchKind::Accurate => build_accurate(),
            ArchKind::Toy => return build_toy(num_classes, scale_factor),
        };
        Ok(spec.with_num_classes(num_classes))
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Same network with a different output width (e.g. an extra background class).
    pub fn with_num_classes(mut self, num_classes: usize) -> Self {
        if let Some(last) = self.layers.last_mut() {
            last.channels = num_classes;
        }
        self.num_classes = num_classes;
        self
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.is_conv())
    }

    pub fn full_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| !l.is_conv())
    }

    pub fn top_channels(&self) -> usize {
        self.conv_layers().last().map_or(0, |l| l.channels)
    }

    /// Feature length entering the first fully-connected layer.
    pub fn classifier_fan_in(&self) -> usize {
        self.top_channels() * self.classifier_input.0 * self.classifier_input.1
    }

    /// Cumulative stride of one classifier output cell without offset pooling.
    pub fn coarse_stride(&self) -> usize {
        self.feature_downsampling * self.final_pool
    }

    /// `(name, shape)` of every trainable tensor, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = Vec::new();
        let mut in_c = self.input_channels;
        let mut fan_in = 0;
        for layer in &self.layers {
            let weight = match layer.stage {
                Stage::Conv | Stage::ConvMax => {
                    let (kh, kw) = layer.filter.expect("conv layer without filter");
                    let s = vec![layer.channels, in_c, kh, kw];
                    in_c = layer.channels;
                    fan_in = self.classifier_fan_in();
                    s
                }
                Stage::Full => {
                    let s = vec![layer.channels, fan_in];
                    fan_in = layer.channels;
                    s
                }
            };
            shapes.push((format!("layer{}.weight", layer.index), weight));
            shapes.push((format!("layer{}.bias", layer.index), vec![layer.channels]));
        }
        shapes
    }

    pub fn count_parameters(&self) -> u64 {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>() as u64)
            .sum()
    }

    /// Multiply-accumulates of one forward pass at the training input size.
    pub fn count_connections(&self) -> u64 {
        let trace = self
            .trace(self.train_input)
            .expect("training input must fit its own architecture");
        let shapes = self.param_shapes();
        trace
            .iter()
            .zip(shapes.chunks(2))
            .map(|(t, w)| {
                let per_cell: usize = w[0].1[1..].iter().product();
                let cells = t.conv_output.0 * t.conv_output.1;
                (per_cell * cells * w[0].1[0]) as u64
            })
            .sum()
    }

    /// Spatial extents of every layer at `input`, pooling the top maps with offset 0.
    pub fn trace(&self, input: (usize, usize)) -> Result<Vec<LayerTrace>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut cur = input;
        let mut full_seen = false;
        for layer in &self.layers {
            let entry = match layer.stage {
                Stage::Conv | Stage::ConvMax => {
                    let conv = conv_extent(layer, cur)?;
                    let pooled = match layer.pool {
                        Some(p) => pool_extent(layer, conv, p)?,
                        None => conv,
                    };
                    LayerTrace {
                        index: layer.index,
                        stage: layer.stage,
                        input: cur,
                        conv_output: conv,
                        output: pooled,
                    }
                }
                Stage::Full => {
                    let window = if full_seen { (1, 1) } else { self.classifier_input };
                    full_seen = true;
                    let o = (
                        sliding_extent(cur.0, window.0, 1),
                        sliding_extent(cur.1, window.1, 1),
                    );
                    let (Some(oh), Some(ow)) = o else {
                        return Err(Error::InputTooSmall(format!(
                            "layer {} needs a {}x{} field, got {}x{}",
                            layer.index, window.0, window.1, cur.0, cur.1
                        )));
                    };
                    LayerTrace {
                        index: layer.index,
                        stage: layer.stage,
                        input: cur,
                        conv_output: (oh, ow),
                        output: (oh, ow),
                    }
                }
            };
            cur = entry.output;
            out.push(entry);
        }
        Ok(out)
    }

    /// Extent of the top convolutional maps before their final pooling.
    pub fn unpooled_extent(&self, input: (usize, usize)) -> Result<(usize, usize)> {
        let mut cur = input;
        let conv: Vec<_> = self.conv_layers().collect();
        for (i, layer) in conv.iter().enumerate() {
            cur = conv_extent(layer, cur)?;
            if i + 1 < conv.len() {
                if let Some(p) = layer.pool {
                    cur = pool_extent(layer, cur, p)?;
                }
            }
        }
        Ok(cur)
    }

    /// True when every strided step up to the unpooled top maps divides exactly
    /// and the final pooling leaves no ragged cells at any offset.
    pub fn fits_exactly(&self, input: (usize, usize)) -> bool {
        let conv: Vec<_> = self.conv_layers().collect();
        let mut cur = input;
        for (i, layer) in conv.iter().enumerate() {
            let (kh, kw) = layer.filter.unwrap_or((1, 1));
            let (sy, sx) = layer.conv_stride.unwrap_or((1, 1));
            let pad = layer.padding();
            let ph = cur.0 + pad.top + pad.bottom;
            let pw = cur.1 + pad.left + pad.right;
            if ph < kh || pw < kw || !(ph - kh).is_multiple_of(sy) || !(pw - kw).is_multiple_of(sx) {
                return false;
            }
            cur = ((ph - kh) / sy + 1, (pw - kw) / sx + 1);
            if i + 1 < conv.len() {
                if let Some((qh, qw)) = layer.pool {
                    let (ssy, ssx) = layer.pool_stride.unwrap_or((qh, qw));
                    if cur.0 < qh || cur.1 < qw || !(cur.0 - qh).is_multiple_of(ssy) || !(cur.1 - qw).is_multiple_of(ssx) {
                        return false;
                    }
                    cur = ((cur.0 - qh) / ssy + 1, (cur.1 - qw) / ssx + 1);
                }
            }
        }
        let p = self.final_pool;
        cur.0 % p == p - 1 && cur.1 % p == p - 1
    }
}

fn conv_extent(layer: &LayerSpec, cur: (usize, usize)) -> Result<(usize, usize)> {
    let (kh, kw) = layer.filter.unwrap_or((1, 1));
    let (sy, sx) = layer.conv_stride.unwrap_or((1, 1));
    let pad = layer.padding();
    let h = sliding_extent(cur.0 + pad.top + pad.bottom, kh, sy);
    let w = sliding_extent(cur.1 + pad.left + pad.right, kw, sx);
    match (h, w) {
        (Some(h), Some(w)) => Ok((h, w)),
        _ => Err(Error::InputTooSmall(format!(
            "layer {} filter {kh}x{kw} does not fit a {}x{} input",
            layer.index, cur.0, cur.1
        ))),
    }
}

fn pool_extent(layer: &LayerSpec, cur: (usize, usize), p: (usize, usize)) -> Result<(usize, usize)> {
    let s = layer.pool_stride.unwrap_or(p);
    match (sliding_extent(cur.0, p.0, s.0), sliding_extent(cur.1, p.1, s.1)) {
        (Some(h), Some(w)) => Ok((h, w)),
        _ => Err(Error::InputTooSmall(format!(
            "layer {} pooling {}x{} does not fit a {}x{} map",
            layer.index, p.0, p.1, cur.0, cur.1
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(trace: &[LayerTrace]) -> Vec<(usize, usize)> {
        trace.iter().map(|t| t.input).collect()
    }

    #[test]
    fn accurate_training_trace() {
        let spec = build_accurate();
        let t = spec.trace((221, 221)).unwrap();
        let want = [221, 36, 15, 15, 15, 15, 5, 1, 1];
        assert_eq!(inputs(&t), want.iter().map(|&v| (v, v)).collect::<Vec<_>>());
        assert_eq!(spec.feature_downsampling, 12);
        assert_eq!(spec.coarse_stride(), 36);
    }

    #[test]
    fn fast_training_trace() {
        let spec = build_fast();
        let t = spec.trace((231, 231)).unwrap();
        let want = [231, 28, 12, 12, 12, 6, 1, 1];
        assert_eq!(inputs(&t), want.iter().map(|&v| (v, v)).collect::<Vec<_>>());
        // Layer 2 convolves 28 down to 24 before pooling.
        assert_eq!(t[1].conv_output, (24, 24));
    }

    #[test]
    fn unpooled_extents() {
        let spec = build_accurate();
        assert_eq!(spec.unpooled_extent((245, 245)).unwrap(), (17, 17));
        assert_eq!(spec.unpooled_extent((281, 317)).unwrap(), (20, 23));
        assert_eq!(spec.unpooled_extent((461, 569)).unwrap(), (35, 44));
        assert!(spec.unpooled_extent((20, 20)).is_err());
    }

    #[test]
    fn toy_channels_and_first_layer_count() {
        let toy = build_toy(4, 8).unwrap();
        let ch: Vec<usize> = toy.layers.iter().map(|l| l.channels).collect();
        assert_eq!(ch, vec![12, 32, 64, 64, 128, 128, 512, 512, 4]);
        let stages: Vec<Stage> = toy.layers.iter().map(|l| l.stage).collect();
        let acc: Vec<Stage> = build_accurate().layers.iter().map(|l| l.stage).collect();
        assert_eq!(stages, acc);
        let shapes = toy.param_shapes();
        let first: usize = shapes[..2].iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        assert_eq!(first, 12 * (7 * 7) + 12);
        assert!(build_toy(4, 3).is_err());
        assert!(build_toy(4, 0).is_err());
        let t = toy.trace(toy.train_input).unwrap();
        assert_eq!(t.last().unwrap().output, (1, 1));
    }

    #[test]
    fn exact_fit_rule() {
        let acc = build_accurate();
        for s in [(245, 245), (281, 317), (317, 389), (389, 461), (461, 569)] {
            assert!(acc.fits_exactly(s), "{s:?}");
        }
        assert!(!acc.fits_exactly((246, 245)));
        let toy = build_toy(4, 8).unwrap();
        assert!(toy.fits_exactly((42, 42)));
        assert!(!toy.fits_exactly((43, 43)));
    }
}
