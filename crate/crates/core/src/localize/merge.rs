use std::cmp::Ordering;

use super::BBox;
use crate::error::{Error, Result};

/// Where a raw box came from: scale, pooling offset and pooled-grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Provenance {
    pub scale: usize,
    pub dx: usize,
    pub dy: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub class_id: usize,
    pub confidence: f64,
    pub support: usize,
    /// Sorted ascending.
    pub provenance: Vec<Provenance>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MergeConfig {
    /// Merging stops once the best pair scores above `t`.
    pub t: f64,
    /// Classes kept per scale when building the candidate set.
    pub k: usize,
    /// Normaliser for centre distances.
    pub image_diagonal: f64,
}

impl MergeConfig {
    pub fn new(t: f64, k: usize, image_diagonal: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::invalid(format!("merge threshold must be positive, got {t}")));
        }
        if k == 0 {
            return Err(Error::invalid("merge needs k >= 1"));
        }
        if !(image_diagonal > 0.0 && image_diagonal.is_finite()) {
            return Err(Error::invalid(format!("image diagonal must be positive, got {image_diagonal}")));
        }
        Ok(MergeConfig { t, k, image_diagonal })
    }
}

/// Centre distance over the image diagonal plus the fraction of the smaller
/// box not covered by the other. Zero for identical boxes; infinite across classes.
pub fn match_score(a: &ScoredBox, b: &ScoredBox, image_diagonal: f64) -> f64 {
    if a.class_id != b.class_id {
        return f64::INFINITY;
    }
    let (ax, ay) = a.bbox.center();
    let (bx, by) = b.bbox.center();
    let (dx, dy) = ((ax - bx) as f64, (ay - by) as f64);
    let dist = (dx * dx + dy * dy).sqrt() / image_diagonal;
    let min_area = a.bbox.area().min(b.bbox.area()) as f64;
    let cover = if min_area > 0.0 {
        a.bbox.intersection(&b.bbox) as f64 / min_area
    } else if a.bbox == b.bbox {
        1.0
    } else {
        0.0
    };
    dist + (1.0 - cover)
}

/// Coordinate mean of the two boxes; confidences, supports and provenance accumulate.
pub fn box_merge(a: &ScoredBox, b: &ScoredBox) -> ScoredBox {
    let mean = |p: f32, q: f32| (p + q) * 0.5;
    let mut provenance = a.provenance.clone();
    provenance.extend_from_slice(&b.provenance);
    provenance.sort_unstable();
    ScoredBox {
        bbox: BBox::new(
            mean(a.bbox.x1, b.bbox.x1),
            mean(a.bbox.y1, b.bbox.y1),
            mean(a.bbox.x2, b.bbox.x2),
            mean(a.bbox.y2, b.bbox.y2),
        ),
        class_id: a.class_id,
        confidence: a.confidence + b.confidence,
        support: a.support + b.support,
        provenance,
    }
}

/// Total order on boxes used to break ties: class, provenance, then geometry and confidence.
pub(crate) fn key_cmp(a: &ScoredBox, b: &ScoredBox) -> Ordering {
    a.class_id
        .cmp(&b.class_id)
        .then_with(|| a.provenance.cmp(&b.provenance))
        .then_with(|| a.bbox.x1.total_cmp(&b.bbox.x1))
        .then_with(|| a.bbox.y1.total_cmp(&b.bbox.y1))
        .then_with(|| a.bbox.x2.total_cmp(&b.bbox.x2))
        .then_with(|| a.bbox.y2.total_cmp(&b.bbox.y2))
        .then_with(|| a.confidence.total_cmp(&b.confidence))
}

/// Highest confidence first, ties by key.
pub(crate) fn sort_ranked(boxes: &mut [ScoredBox]) {
    boxes.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then_with(|| key_cmp(a, b)));
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeOutcome {
    /// Surviving boxes ranked by accumulated confidence.
    pub boxes: Vec<ScoredBox>,
    pub merges: usize,
}

struct Pair {
    score: f64,
    partner: usize,
}

/// Orders candidate pairs by score, then by the smaller key, then the larger.
fn pair_cmp(boxes: &[Option<ScoredBox>], s1: f64, (a1, b1): (usize, usize), s2: f64, (a2, b2): (usize, usize)) -> Ordering {
    let get = |i: usize| boxes[i].as_ref().expect("live box");
    let sorted = |a: usize, b: usize| {
        if key_cmp(get(a), get(b)) == Ordering::Greater {
            (b, a)
        } else {
            (a, b)
        }
    };
    let (l1, h1) = sorted(a1, b1);
    let (l2, h2) = sorted(a2, b2);
    s1.total_cmp(&s2)
        .then_with(|| key_cmp(get(l1), get(l2)))
        .then_with(|| key_cmp(get(h1), get(h2)))
}

fn best_partner(boxes: &[Option<ScoredBox>], i: usize, diag: f64) -> Option<Pair> {
    let bi = boxes[i].as_ref()?;
    let mut best: Option<Pair> = None;
    for (j, bj) in boxes.iter().enumerate() {
        let Some(bj) = bj else { continue };
        if j == i || bj.class_id != bi.class_id {
            continue;
        }
        let s = match_score(bi, bj, diag);
        let better = match &best {
            None => true,
            Some(p) => pair_cmp(boxes, s, (i, j), p.score, (i, p.partner)) == Ordering::Less,
        };
        if better {
            best = Some(Pair { score: s, partner: j });
        }
    }
    best
}

/// Repeatedly merges the best-matching pair until every remaining pair scores above `t`.
pub fn greedy_merge(boxes: Vec<ScoredBox>, cfg: &MergeConfig) -> Result<MergeOutcome> {
    for b in &boxes {
        if !b.bbox.is_finite() || b.confidence.is_nan() || b.confidence < 0.0 || b.support == 0 {
            return Err(Error::invalid(format!("malformed box in merge input: {b:?}")));
        }
    }
    let diag = cfg.image_diagonal;
    let mut live: Vec<Option<ScoredBox>> = boxes.into_iter().map(Some).collect();
    let mut best: Vec<Option<Pair>> = (0..live.len()).map(|i| best_partner(&live, i, diag)).collect();
    let mut merges = 0;
    loop {
        let mut top: Option<(usize, usize, f64)> = None;
        for (i, p) in best.iter().enumerate() {
            let Some(p) = p else { continue };
            let take = match top {
                None => true,
                Some((a, b, s)) => pair_cmp(&live, p.score, (i, p.partner), s, (a, b)) == Ordering::Less,
            };
            if take {
                top = Some((i, p.partner, p.score));
            }
        }
        let Some((i, j, score)) = top else { break };
        if score > cfg.t {
            break;
        }
        let merged = box_merge(live[i].as_ref().expect("live"), live[j].as_ref().expect("live"));
        live[i] = Some(merged);
        live[j] = None;
        best[j] = None;
        merges += 1;
        best[i] = best_partner(&live, i, diag);
        for m in 0..live.len() {
            if m == i || live[m].is_none() {
                continue;
            }
            let stale = matches!(&best[m], Some(p) if p.partner == i || p.partner == j);
            if stale {
                best[m] = best_partner(&live, m, diag);
                continue;
            }
            let (bm, bi) = (live[m].as_ref().expect("live"), live[i].as_ref().expect("live"));
            if bm.class_id != bi.class_id {
                continue;
            }
            let s = match_score(bm, bi, diag);
            let better = match &best[m] {
                None => true,
                Some(p) => pair_cmp(&live, s, (m, i), p.score, (m, p.partner)) == Ordering::Less,
            };
            if better {
                best[m] = Some(Pair { score: s, partner: i });
            }
        }
    }
    let mut out: Vec<ScoredBox> = live.into_iter().flatten().collect();
    sort_ranked(&mut out);
    Ok(MergeOutcome { boxes: out, merges })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sb(x1: f32, y1: f32, x2: f32, y2: f32, conf: f64, id: usize) -> ScoredBox {
        ScoredBox {
            bbox: BBox::new(x1, y1, x2, y2),
            class_id: 0,
            confidence: conf,
            support: 1,
            provenance: vec![Provenance { scale: 0, dx: 0, dy: 0, row: id, col: 0 }],
        }
    }

    fn cfg(t: f64) -> MergeConfig {
        MergeConfig::new(t, 1, 100.0).unwrap()
    }

    #[test]
    fn score_basics() {
        let a = sb(0.0, 0.0, 10.0, 10.0, 0.5, 0);
        assert_eq!(match_score(&a, &a.clone(), 100.0), 0.0);
        let mut c = a.clone();
        c.class_id = 1;
        assert!(match_score(&a, &c, 100.0).is_infinite());
        let b = sb(5.0, 0.0, 15.0, 10.0, 0.5, 1);
        assert_eq!(match_score(&a, &b, 100.0), match_score(&b, &a, 100.0));
        assert!((match_score(&a, &b, 100.0) - (0.05 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn merge_averages_and_accumulates() {
        let m = box_merge(&sb(0.0, 0.0, 10.0, 10.0, 0.5, 0), &sb(10.0, 10.0, 20.0, 20.0, 0.5, 1));
        assert_eq!(m.bbox, BBox::new(5.0, 5.0, 15.0, 15.0));
        assert_eq!(m.confidence, 1.0);
        assert_eq!(m.support, 2);
        assert_eq!(m.provenance.len(), 2);
    }

    #[test]
    fn greedy_small_cases() {
        assert!(greedy_merge(vec![], &cfg(0.5)).unwrap().boxes.is_empty());
        let one = sb(1.0, 2.0, 3.0, 4.0, 0.25, 0);
        assert_eq!(greedy_merge(vec![one.clone()], &cfg(0.5)).unwrap().boxes, vec![one.clone()]);
        let mut twin = one.clone();
        twin.provenance[0].row = 1;
        let out = greedy_merge(vec![one, twin], &cfg(1e-9)).unwrap();
        assert_eq!(out.boxes.len(), 1);
        assert_eq!(out.boxes[0].confidence, 0.5);
        assert_eq!(out.merges, 1);
    }

    #[test]
    fn far_boxes_stay_apart() {
        let out = greedy_merge(
            vec![sb(0.0, 0.0, 10.0, 10.0, 0.5, 0), sb(50.0, 50.0, 60.0, 60.0, 0.75, 1)],
            &cfg(0.5),
        )
        .unwrap();
        assert_eq!(out.merges, 0);
        assert_eq!(out.boxes[0].confidence, 0.75);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(MergeConfig::new(0.0, 1, 1.0).is_err());
        assert!(MergeConfig::new(0.1, 0, 1.0).is_err());
    }
}
