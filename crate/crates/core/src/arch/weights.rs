//! Weight storage, initialisation and the binary weight file.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "SLNW"
//! version      u32      currently 1
//! kind         u8       0 classifier, 1 detector, 2 regressor, 3 score dump
//! arch         u16 length + UTF-8 name
//! num_classes  u32
//! scale_factor u32
//! heads        u32      regression heads (1 shared, C per-class), else 0
//! steps        u64      optimiser steps applied so far
//! count        u32      number of tensors
//! per tensor:  u16 length + UTF-8 name, u8 rank, rank × u32 dims
//! payload      every tensor's f32 values in header order
//! checksum     u64      first 8 bytes (LE) of SHA-256 over everything above
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::{ArchKind, ArchSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SLNW";
pub const FORMAT_VERSION: u32 = 1;
/// Prefix of optimiser state tensors stored alongside the parameters.
pub const VELOCITY_PREFIX: &str = "velocity/";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StoreKind {
    Classifier,
    /// Classifier whose last output is the background class.
    Detector,
    Regressor,
    ScoreDump,
}

impl StoreKind {
    fn code(self) -> u8 {
        match self {
            StoreKind::Classifier => 0,
            StoreKind::Detector => 1,
            StoreKind::Regressor => 2,
            StoreKind::ScoreDump => 3,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => StoreKind::Classifier,
            1 => StoreKind::Detector,
            2 => StoreKind::Regressor,
            3 => StoreKind::ScoreDump,
            other => return Err(Error::Format(format!("unknown store kind {other}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoreHeader {
    pub kind: StoreKind,
    pub arch: String,
    pub num_classes: usize,
    pub scale_factor: usize,
    pub heads: usize,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightStore {
    pub header: StoreHeader,
    tensors: Vec<(String, Tensor)>,
}

impl WeightStore {
    pub fn new(header: StoreHeader, tensors: Vec<(String, Tensor)>) -> Self {
        WeightStore { header, tensors }
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.tensors
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn expect(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("weight store has no tensor `{name}`")))
    }

    /// Parameters only, in storage order (optimiser state excluded).
    pub fn params(&self) -> Vec<&Tensor> {
        self.tensors
            .iter()
            .filter(|(n, _)| !n.starts_with(VELOCITY_PREFIX))
            .map(|(_, t)| t)
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors
            .iter_mut()
            .filter(|(n, _)| !n.starts_with(VELOCITY_PREFIX))
            .map(|(_, t)| t)
            .collect()
    }

    pub fn strip_velocity(&mut self) {
        self.tensors.retain(|(n, _)| !n.starts_with(VELOCITY_PREFIX));
    }

    /// Architecture the parameters belong to (classifier and detector stores only).
    pub fn arch_spec(&self) -> Result<ArchSpec> {
        let kind: ArchKind = self.header.arch.parse()?;
        ArchSpec::from_parts(kind, self.header.num_classes, self.header.scale_factor)
    }

    /// Serialises the store to bytes, checksum included.
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(h.kind.code());
        put_str(&mut out, &h.arch);
        out.extend_from_slice(&(h.num_classes as u32).to_le_bytes());
        out.extend_from_slice(&(h.scale_factor as u32).to_le_bytes());
        out.extend_from_slice(&(h.heads as u32).to_le_bytes());
        out.extend_from_slice(&h.steps.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    /// Parses and checks magic, checksum and version; shapes are not validated here.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a weight file (bad magic)".into()));
        }
        if bytes.len() < 16 {
            return Err(Error::Checksum {
                stored: 0,
                computed: checksum(bytes),
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8-byte tail"));
        let computed = checksum(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let kind = StoreKind::from_code(r.u8()?)?;
        let arch = r.string()?;
        let num_classes = r.u32()? as usize;
        let scale_factor = r.u32()? as usize;
        let heads = r.u32()? as usize;
        let steps = r.u64()?;
        let count = r.u32()? as usize;
        let mut layout = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            layout.push((name, dims));
        }
        let mut tensors = Vec::with_capacity(count);
        for (name, dims) in layout {
            let n: usize = dims.iter().product();
            let raw = r.take(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                .collect();
            let t = Tensor::new(dims, data).map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != body.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                body.len() - r.pos
            )));
        }
        Ok(WeightStore {
            header: StoreHeader {
                kind,
                arch,
                num_classes,
                scale_factor,
                heads,
                steps,
            },
            tensors,
        })
    }

    pub fn checksum(&self) -> u64 {
        let bytes = self.to_bytes();
        u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("checksum tail"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Loads a store and validates its tensors against the shapes its header implies.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let store = Self::from_bytes(&fs::read(path)?)?;
        store.validate()?;
        Ok(store)
    }

    /// Checks every tensor against the expected shape table for the header.
    pub fn validate(&self) -> Result<()> {
        let expected = match self.header.kind {
            StoreKind::ScoreDump => return Ok(()),
            StoreKind::Classifier | StoreKind::Detector => self.arch_spec()?.param_shapes(),
            StoreKind::Regressor => {
                let spec = self.arch_spec()?;
                crate::localize::RegressorSpec::for_arch(&spec, self.header.heads).param_shapes(&spec)
            }
        };
        validate_shapes(&self.tensors, &expected)
    }
}

fn validate_shapes(tensors: &[(String, Tensor)], expected: &[(String, Vec<usize>)]) -> Result<()> {
    let params: Vec<&(String, Tensor)> = tensors
        .iter()
        .filter(|(n, _)| !n.starts_with(VELOCITY_PREFIX))
        .collect();
    for (i, (name, shape)) in expected.iter().enumerate() {
        let Some((found_name, t)) = params.get(i) else {
            return Err(Error::WeightShape {
                tensor: name.clone(),
                expected: shape.clone(),
                found: vec![],
            });
        };
        if found_name != name || t.shape() != &shape[..] {
            return Err(Error::WeightShape {
                tensor: name.clone(),
                expected: shape.clone(),
                found: t.shape().to_vec(),
            });
        }
    }
    if let Some((extra, t)) = params.get(expected.len()) {
        return Err(Error::WeightShape {
            tensor: extra.clone(),
            expected: vec![],
            found: t.shape().to_vec(),
        });
    }
    for (name, t) in tensors.iter().filter(|(n, _)| n.starts_with(VELOCITY_PREFIX)) {
        let base = &name[VELOCITY_PREFIX.len()..];
        match expected.iter().find(|(n, _)| n == base) {
            Some((_, s)) if t.shape() == &s[..] => {}
            other => {
                return Err(Error::WeightShape {
                    tensor: name.clone(),
                    expected: other.map(|(_, s)| s.clone()).unwrap_or_default(),
                    found: t.shape().to_vec(),
                })
            }
        }
    }
    Ok(())
}

fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest prefix"))
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("unexpected end of weight file at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
}

/// How weights are drawn; biases always start at zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// i.i.d. normal with a fixed standard deviation.
    Gaussian { mean: f32, std: f32 },
    /// Normal with std `gain / sqrt(fan_in)`.
    FanIn { gain: f32 },
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::Gaussian { mean: 0.0, std: 0.01 }
    }
}

/// Weights ~ N(0, 0.01²), biases 0.
pub fn init_weights(spec: &ArchSpec, seed: u64) -> WeightStore {
    init_weights_with(spec, seed, InitScheme::default())
}

pub fn init_weights_with(spec: &ArchSpec, seed: u64, scheme: InitScheme) -> WeightStore {
    let header = StoreHeader {
        kind: StoreKind::Classifier,
        arch: spec.name().to_string(),
        num_classes: spec.num_classes,
        scale_factor: spec.scale_factor,
        heads: 0,
        steps: 0,
    };
    WeightStore::new(header, init_tensors(&spec.param_shapes(), seed, scheme))
}

pub(crate) fn init_tensors(shapes: &[(String, Vec<usize>)], seed: u64, scheme: InitScheme) -> Vec<(String, Tensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes
        .iter()
        .map(|(name, shape)| {
            let t = if name.ends_with(".bias") {
                Tensor::zeros(shape)
            } else {
                let (mean, std) = match scheme {
                    InitScheme::Gaussian { mean, std } => (mean, std),
                    InitScheme::FanIn { gain } => {
                        let fan_in: usize = shape[1..].iter().product();
                        (0.0, gain / (fan_in as f32).sqrt())
                    }
                };
                let dist = Normal::new(mean, std).expect("finite standard deviation");
                Tensor::from_fn(shape, |_| dist.sample(&mut rng))
            };
            (name.clone(), t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::build_toy;

    #[test]
    fn init_statistics() {
        let shapes = vec![("w.weight".to_string(), vec![1000, 1000])];
        let t = &init_tensors(&shapes, 11, InitScheme::default())[0].1;
        let n = t.len() as f64;
        let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() <= 1e-4, "mean {mean}");
        assert!((var.sqrt() - 0.01).abs() <= 2e-4, "std {}", var.sqrt());
    }

    #[test]
    fn same_seed_same_store() {
        let spec = build_toy(4, 16).unwrap();
        assert_eq!(init_weights(&spec, 5), init_weights(&spec, 5));
        assert_ne!(init_weights(&spec, 5), init_weights(&spec, 6));
        let store = init_weights(&spec, 5);
        assert!(store.get("layer1.bias").unwrap().data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn bytes_round_trip_and_errors() {
        let spec = build_toy(3, 32).unwrap();
        let store = init_weights(&spec, 1);
        let bytes = store.to_bytes();
        let back = WeightStore::from_bytes(&bytes).unwrap();
        back.validate().unwrap();
        assert_eq!(back.to_bytes(), bytes);

        let truncated = &bytes[..bytes.len() - 100];
        assert!(matches!(WeightStore::from_bytes(truncated), Err(Error::Checksum { .. })));

        let mut newer = bytes[..bytes.len() - 8].to_vec();
        newer[4..8].copy_from_slice(&2u32.to_le_bytes());
        let sum = checksum(&newer);
        newer.extend_from_slice(&sum.to_le_bytes());
        assert!(matches!(
            WeightStore::from_bytes(&newer),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn wrong_shape_names_layer() {
        let spec = build_toy(3, 32).unwrap();
        let mut store = init_weights(&spec, 1);
        *store.get_mut("layer4.weight").unwrap() = Tensor::zeros(&[16, 16, 3, 1]);
        let back = WeightStore::from_bytes(&store.to_bytes()).unwrap();
        match back.validate() {
            Err(Error::WeightShape { tensor, .. }) => assert_eq!(tensor, "layer4.weight"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }
}
