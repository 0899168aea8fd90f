use std::cmp::Ordering;

use slidenet::localize::{MergeConfig, ScoredBox};

type Key = (usize, Vec<(usize, usize, usize, usize, usize)>, [f32; 4], f64);

fn key(b: &ScoredBox) -> Key {
    (
        b.class_id,
        b.provenance.iter().map(|p| (p.scale, p.dx, p.dy, p.row, p.col)).collect(),
        [b.bbox.x1, b.bbox.y1, b.bbox.x2, b.bbox.y2],
        b.confidence,
    )
}

fn key_order(a: &ScoredBox, b: &ScoredBox) -> Ordering {
    let (ka, kb) = (key(a), key(b));
    ka.0.cmp(&kb.0)
        .then_with(|| ka.1.cmp(&kb.1))
        .then_with(|| {
            ka.2.iter()
                .zip(&kb.2)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| ka.3.total_cmp(&kb.3))
}

fn score(a: &ScoredBox, b: &ScoredBox, diagonal: f64) -> f64 {
    if a.class_id != b.class_id {
        return f64::INFINITY;
    }
    let cx = |r: &ScoredBox| (r.bbox.x1 as f64 + r.bbox.x2 as f64) / 2.0;
    let cy = |r: &ScoredBox| (r.bbox.y1 as f64 + r.bbox.y2 as f64) / 2.0;
    let d = ((cx(a) - cx(b)).powi(2) + (cy(a) - cy(b)).powi(2)).sqrt() / diagonal;
    let area = |r: &ScoredBox| (r.bbox.x2 - r.bbox.x1) as f64 * (r.bbox.y2 - r.bbox.y1) as f64;
    let iw = (a.bbox.x2.min(b.bbox.x2) - a.bbox.x1.max(b.bbox.x1)) as f64;
    let ih = (a.bbox.y2.min(b.bbox.y2) - a.bbox.y1.max(b.bbox.y1)) as f64;
    let inter = if iw > 0.0 && ih > 0.0 { iw * ih } else { 0.0 };
    let smaller = area(a).min(area(b));
    let covered = if smaller > 0.0 {
        inter / smaller
    } else if a.bbox == b.bbox {
        1.0
    } else {
        0.0
    };
    d + 1.0 - covered
}

fn merged(a: &ScoredBox, b: &ScoredBox) -> ScoredBox {
    let mut provenance = [a.provenance.clone(), b.provenance.clone()].concat();
    provenance.sort();
    let avg = |p: f32, q: f32| (p + q) * 0.5;
    ScoredBox {
        bbox: slidenet::BBox::new(avg(a.bbox.x1, b.bbox.x1), avg(a.bbox.y1, b.bbox.y1), avg(a.bbox.x2, b.bbox.x2), avg(a.bbox.y2, b.bbox.y2)),
        class_id: a.class_id,
        confidence: a.confidence + b.confidence,
        support: a.support + b.support,
        provenance,
    }
}

/// Literal greedy accumulation: every step rescans all pairs for the lowest
/// score, stops above `t`, otherwise replaces the pair by its merge. Ties go to
/// the pair whose (smaller, larger) keys come first.
pub fn merge_simulator(boxes: Vec<ScoredBox>, cfg: &MergeConfig) -> Vec<ScoredBox> {
    let mut set = boxes;
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..set.len() {
            for j in 0..set.len() {
                if i == j || key_order(&set[i], &set[j]) == Ordering::Greater {
                    continue;
                }
                if key_order(&set[i], &set[j]) == Ordering::Equal && i > j {
                    continue;
                }
                let s = score(&set[i], &set[j], cfg.image_diagonal);
                if !s.is_finite() {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bs, bi, bj)) => s
                        .total_cmp(&bs)
                        .then_with(|| key_order(&set[i], &set[bi]))
                        .then_with(|| key_order(&set[j], &set[bj]))
                        .is_lt(),
                };
                if better {
                    best = Some((s, i, j));
                }
            }
        }
        match best {
            Some((s, i, j)) if s <= cfg.t => {
                let m = merged(&set[i], &set[j]);
                let (hi, lo) = (i.max(j), i.min(j));
                set.remove(hi);
                set.remove(lo);
                set.push(m);
            }
            _ => break,
        }
    }
    set.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then_with(|| key_order(a, b)));
    set
}
