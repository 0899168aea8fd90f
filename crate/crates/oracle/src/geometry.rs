use slidenet::BBox;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelOverlap {
    pub intersection: f64,
    pub union: f64,
    pub iou: f64,
}

/// Counts sample points on a grid of `resolution` points per unit, each standing
/// for a `1/resolution`-sided cell, inside one or both boxes.
pub fn pixel_overlap(a: &BBox, b: &BBox, resolution: usize) -> PixelOverlap {
    let step = 1.0 / resolution as f64;
    let lo_x = (a.x1.min(b.x1) as f64 / step).floor() as i64;
    let hi_x = (a.x2.max(b.x2) as f64 / step).ceil() as i64;
    let lo_y = (a.y1.min(b.y1) as f64 / step).floor() as i64;
    let hi_y = (a.y2.max(b.y2) as f64 / step).ceil() as i64;
    let inside = |r: &BBox, x: f64, y: f64| x >= r.x1 as f64 && x < r.x2 as f64 && y >= r.y1 as f64 && y < r.y2 as f64;
    let (mut both, mut either) = (0u64, 0u64);
    for iy in lo_y..hi_y {
        let y = (iy as f64 + 0.5) * step;
        for ix in lo_x..hi_x {
            let x = (ix as f64 + 0.5) * step;
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            both += (ia && ib) as u64;
            either += (ia || ib) as u64;
        }
    }
    let cell = step * step;
    let (intersection, union) = (both as f64 * cell, either as f64 * cell);
    PixelOverlap {
        intersection,
        union,
        iou: if either == 0 { 0.0 } else { both as f64 / either as f64 },
    }
}
