//! Synthetic shape images with exact boxes, and their on-disk layout.
//!
//! A dataset directory holds `images.txt` (one id per line, in order),
//! `truth.txt` (records, one per object, confidence 1) and `images/<id>.ppm`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{read_ppm, write_ppm};
use crate::localize::{read_records, write_records, BBox, Record};
use crate::tensor::Tensor;

pub const SHAPE_NAMES: [&str; 6] = ["disk", "square", "triangle", "cross", "ring", "diamond"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Object {
    pub class_id: usize,
    pub bbox: BBoxI,
}

/// Integer-aligned box, stored as pixel edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBoxI {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
}

impl BBoxI {
    pub fn to_bbox(self) -> BBox {
        BBox::new(self.x1 as f32, self.y1 as f32, self.x2 as f32, self.y2 as f32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub id: String,
    /// RGB in `[0, 1]`, quantised to multiples of 1/255.
    pub image: Tensor,
    pub objects: Vec<(usize, BBox)>,
}

impl SyntheticSample {
    /// Class of the first object, if any.
    pub fn label(&self) -> Option<usize> {
        self.objects.first().map(|(c, _)| *c)
    }

    pub fn size(&self) -> (usize, usize) {
        (self.image.shape()[1], self.image.shape()[2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetOptions {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object side lengths as fractions of the image side.
    pub min_extent: f32,
    pub max_extent: f32,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            min_objects: 0,
            max_objects: 2,
            min_extent: 0.25,
            max_extent: 0.5,
        }
    }
}

impl DatasetOptions {
    pub fn single_object() -> Self {
        DatasetOptions {
            min_objects: 1,
            max_objects: 1,
            min_extent: 0.3,
            max_extent: 0.55,
        }
    }
}

/// Shapes on noise, 0–2 objects per image.
pub fn make_synthetic_dataset(n: usize, num_classes: usize, image_size: usize, seed: u64) -> Result<Vec<SyntheticSample>> {
    make_synthetic_dataset_with(n, num_classes, image_size, seed, DatasetOptions::default())
}

pub fn make_synthetic_dataset_with(
    n: usize,
    num_classes: usize,
    image_size: usize,
    seed: u64,
    opts: DatasetOptions,
) -> Result<Vec<SyntheticSample>> {
    if num_classes == 0 || num_classes > SHAPE_NAMES.len() {
        return Err(Error::invalid(format!(
            "synthetic data supports 1..={} classes, got {num_classes}",
            SHAPE_NAMES.len()
        )));
    }
    if image_size < 8 || opts.min_objects > opts.max_objects || !(0.0 < opts.min_extent && opts.min_extent <= opts.max_extent && opts.max_extent <= 1.0) {
        return Err(Error::invalid("invalid synthetic dataset options"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| render_sample(&mut rng, format!("img{i:05}"), num_classes, image_size, &opts))
        .collect()
}

fn render_sample(rng: &mut ChaCha8Rng, id: String, num_classes: usize, size: usize, opts: &DatasetOptions) -> Result<SyntheticSample> {
    let mut px = vec![0.0f32; 3 * size * size];
    for v in &mut px {
        *v = rng.gen_range(0.0..0.35);
    }
    let count = rng.gen_range(opts.min_objects..=opts.max_objects);
    let mut placed: Vec<Object> = Vec::with_capacity(count);
    let lo = ((opts.min_extent * size as f32).round() as usize).max(4);
    let hi = ((opts.max_extent * size as f32).round() as usize).clamp(lo, size);
    let mut attempts = 0;
    while placed.len() < count {
        attempts += 1;
        if attempts > 1000 {
            return Err(Error::invalid(format!("could not place {count} objects in a {size}px image")));
        }
        let s = rng.gen_range(lo..=hi);
        let x = rng.gen_range(0..=size - s);
        let y = rng.gen_range(0..=size - s);
        let b = BBoxI { x1: x, y1: y, x2: x + s, y2: y + s };
        let class_id = rng.gen_range(0..num_classes);
        let clear = placed.iter().all(|o| {
            b.x2 + 1 < o.bbox.x1 || o.bbox.x2 + 1 < b.x1 || b.y2 + 1 < o.bbox.y1 || o.bbox.y2 + 1 < b.y1
        });
        if clear {
            placed.push(Object { class_id, bbox: b });
        }
    }
    for o in &placed {
        let color = [rng.gen_range(0.6..1.0f32), rng.gen_range(0.6..1.0f32), rng.gen_range(0.6..1.0f32)];
        draw_shape(&mut px, size, o, color);
    }
    for v in &mut px {
        *v = (*v * 255.0).round() / 255.0;
    }
    Ok(SyntheticSample {
        id,
        image: Tensor::new(vec![3, size, size], px)?,
        objects: placed.iter().map(|o| (o.class_id, o.bbox.to_bbox())).collect(),
    })
}

/// Whether the point `(u, v)` in the unit square belongs to shape `class_id`.
fn inside(class_id: usize, u: f32, v: f32) -> bool {
    let (cu, cv) = (u - 0.5, v - 0.5);
    match class_id {
        0 => cu * cu + cv * cv <= 0.25,
        1 => true,
        2 => cu.abs() <= 0.5 * v,
        3 => cu.abs() <= 1.0 / 6.0 || cv.abs() <= 1.0 / 6.0,
        4 => {
            let r2 = cu * cu + cv * cv;
            (0.09..=0.25).contains(&r2)
        }
        _ => cu.abs() + cv.abs() <= 0.5 + 1e-4,
    }
}

fn draw_shape(px: &mut [f32], size: usize, o: &Object, color: [f32; 3]) {
    let b = o.bbox;
    let (w, h) = ((b.x2 - b.x1) as f32, (b.y2 - b.y1) as f32);
    for y in b.y1..b.y2 {
        for x in b.x1..b.x2 {
            let u = (x - b.x1) as f32 / w + 0.5 / w;
            let v = (y - b.y1) as f32 / h + 0.5 / h;
            if inside(o.class_id, u, v) {
                for (c, col) in color.iter().enumerate() {
                    px[(c * size + y) * size + x] = *col;
                }
            }
        }
    }
}

/// Ground-truth records: one per object, confidence 1.
pub fn truth_records(samples: &[SyntheticSample]) -> Vec<Record> {
    samples
        .iter()
        .flat_map(|s| {
            s.objects.iter().map(move |(c, b)| Record {
                image_id: s.id.clone(),
                class_id: *c,
                confidence: 1.0,
                bbox: Some(*b),
            })
        })
        .collect()
}

pub fn write_dataset(dir: impl AsRef<Path>, samples: &[SyntheticSample]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    let mut ids = String::new();
    for s in samples {
        write_ppm(dir.join("images").join(format!("{}.ppm", s.id)), &s.image)?;
        ids.push_str(&s.id);
        ids.push('\n');
    }
    fs::write(dir.join("images.txt"), ids)?;
    write_records(dir.join("truth.txt"), &truth_records(samples))
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<SyntheticSample>> {
    let dir = dir.as_ref();
    let list = dir.join("images.txt");
    let ids = fs::read_to_string(&list)?;
    let truth = read_records(dir.join("truth.txt"))?;
    let mut samples = Vec::new();
    for (i, line) in ids.lines().enumerate() {
        let id = line.trim();
        if id.is_empty() {
            continue;
        }
        if id.contains(char::is_whitespace) || id.contains('/') {
            return Err(Error::Parse {
                path: list.clone(),
                line: i + 1,
                msg: format!("invalid image id `{id}`"),
            });
        }
        let image = read_ppm(dir.join("images").join(format!("{id}.ppm")))?;
        let (_, h, w) = image.chw()?;
        let objects: Vec<(usize, BBox)> = truth
            .iter()
            .filter(|r| r.image_id == id)
            .map(|r| {
                let b = r.bbox.ok_or_else(|| Error::Format(format!("truth record for `{id}` has no box")))?;
                if b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > w as f32 || b.y2 > h as f32 {
                    return Err(Error::Format(format!("box {b:?} of `{id}` leaves the {w}x{h} image")));
                }
                Ok((r.class_id, b))
            })
            .collect::<Result<_>>()?;
        samples.push(SyntheticSample {
            id: id.to_string(),
            image,
            objects,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_bounds() {
        let a = make_synthetic_dataset(20, 4, 48, 7).unwrap();
        let b = make_synthetic_dataset(20, 4, 48, 7).unwrap();
        assert_eq!(a, b);
        for s in &a {
            assert!(s.objects.len() <= 2);
            for (c, bb) in &s.objects {
                assert!(*c < 4);
                assert!(bb.x1 >= 0.0 && bb.y1 >= 0.0 && bb.x2 <= 48.0 && bb.y2 <= 48.0);
            }
        }
        assert_ne!(a, make_synthetic_dataset(20, 4, 48, 8).unwrap());
    }

    #[test]
    fn shapes_touch_their_boxes() {
        for (class_id, name) in SHAPE_NAMES.iter().enumerate() {
            let o = Object { class_id, bbox: BBoxI { x1: 2, y1: 3, x2: 22, y2: 23 } };
            let mut px = vec![0.0; 3 * 30 * 30];
            draw_shape(&mut px, 30, &o, [1.0; 3]);
            let on = |x: usize, y: usize| px[y * 30 + x] > 0.5;
            let (mut xs, mut ys) = (vec![], vec![]);
            for y in 0..30 {
                for x in 0..30 {
                    if on(x, y) {
                        xs.push(x);
                        ys.push(y);
                    }
                }
            }
            assert_eq!(*xs.iter().min().unwrap(), 2, "{name}");
            assert_eq!(*xs.iter().max().unwrap(), 21, "{name}");
            assert_eq!(*ys.iter().max().unwrap(), 22, "{name}");
        }
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = make_synthetic_dataset(5, 3, 32, 1).unwrap();
        write_dataset(dir.path(), &data).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), data);
    }
}
