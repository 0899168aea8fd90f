use std::collections::{BTreeMap, BTreeSet};

use super::{BBox, Record};
use crate::error::{Error, Result};

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f32 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn by_image(records: &[Record]) -> BTreeMap<&str, Vec<&Record>> {
    let mut m: BTreeMap<&str, Vec<&Record>> = BTreeMap::new();
    for r in records {
        m.entry(r.image_id.as_str()).or_default().push(r);
    }
    m
}

/// Up to `k` predictions per image, highest confidence first (stable).
fn top_guesses<'a>(preds: &[&'a Record], k: usize) -> Vec<&'a Record> {
    let mut p = preds.to_vec();
    p.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    p.truncate(k);
    p
}

/// Fraction of ground-truth images none of whose top-5 guesses carries a correct label.
pub fn evaluate_classification(predictions: &[Record], truth: &[Record]) -> Result<f64> {
    score_images(predictions, truth, |guess, gt| guess.class_id == gt.class_id)
}

/// Fraction of ground-truth images for which no top-5 guess has the right label
/// and an IOU of at least 0.5 with a ground-truth box of that label.
pub fn evaluate_localization(predictions: &[Record], truth: &[Record]) -> Result<f64> {
    if let Some(r) = truth.iter().find(|r| r.bbox.is_none()) {
        return Err(Error::invalid(format!("ground truth for `{}` has no box", r.image_id)));
    }
    score_images(predictions, truth, |guess, gt| {
        guess.class_id == gt.class_id
            && matches!((guess.bbox, gt.bbox), (Some(p), Some(g)) if iou(&p, &g) >= 0.5)
    })
}

fn score_images(predictions: &[Record], truth: &[Record], hit: impl Fn(&Record, &Record) -> bool) -> Result<f64> {
    let gt = by_image(truth);
    if gt.is_empty() {
        return Err(Error::invalid("ground truth is empty"));
    }
    let preds = by_image(predictions);
    let wrong = gt
        .iter()
        .filter(|(id, objects)| {
            let guesses = preds.get(*id).map(|p| top_guesses(p, 5)).unwrap_or_default();
            !guesses.iter().any(|g| objects.iter().any(|o| hit(g, o)))
        })
        .count();
    Ok(wrong as f64 / gt.len() as f64)
}

/// Area under the precision/recall staircase after making precision non-increasing.
/// `hits` is in descending-confidence order; `positives` is the ground-truth count.
pub fn average_precision(hits: &[bool], positives: usize) -> f64 {
    if positives == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    for (i, &h) in hits.iter().enumerate() {
        tp += h as usize;
        recall.push(tp as f64 / positives as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionReport {
    pub map: f64,
    /// `(class, AP)` for every class present in the ground truth.
    pub per_class: Vec<(usize, f64)>,
}

/// Mean average precision over classes present in the ground truth, matching
/// each prediction greedily to the best unmatched ground-truth box at IOU ≥ 0.5.
pub fn evaluate_detection_map(predictions: &[Record], truth: &[Record]) -> Result<DetectionReport> {
    let classes: BTreeSet<usize> = truth.iter().filter(|r| r.bbox.is_some()).map(|r| r.class_id).collect();
    let mut per_class = Vec::with_capacity(classes.len());
    for &c in &classes {
        let gt: Vec<&Record> = truth.iter().filter(|r| r.class_id == c && r.bbox.is_some()).collect();
        let mut preds: Vec<&Record> = predictions
            .iter()
            .filter(|r| r.class_id == c && r.bbox.is_some())
            .collect();
        preds.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        let mut used = vec![false; gt.len()];
        let hits: Vec<bool> = preds
            .iter()
            .map(|p| {
                let pb = p.bbox.expect("filtered");
                let mut best: Option<(usize, f32)> = None;
                for (gi, g) in gt.iter().enumerate() {
                    if used[gi] || g.image_id != p.image_id {
                        continue;
                    }
                    let o = iou(&pb, &g.bbox.expect("filtered"));
                    if o >= 0.5 && best.is_none_or(|(_, bo)| o > bo) {
                        best = Some((gi, o));
                    }
                }
                match best {
                    Some((gi, _)) => {
                        used[gi] = true;
                        true
                    }
                    None => false,
                }
            })
            .collect();
        per_class.push((c, average_precision(&hits, gt.len())));
    }
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|(_, ap)| ap).sum::<f64>() / per_class.len() as f64
    };
    Ok(DetectionReport { map, per_class })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, class: usize, conf: f64, b: Option<(f32, f32, f32, f32)>) -> Record {
        Record {
            image_id: id.into(),
            class_id: class,
            confidence: conf,
            bbox: b.map(|(a, b, c, d)| BBox::new(a, b, c, d)),
        }
    }

    #[test]
    fn iou_values() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert!((iou(&a, &BBox::new(5.0, 0.0, 15.0, 10.0)) - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn localization_error() {
        let truth = vec![rec("a", 1, 1.0, Some((0.0, 0.0, 10.0, 10.0)))];
        assert_eq!(evaluate_localization(&truth, &truth).unwrap(), 0.0);
        let wrong: Vec<_> = (2..7).map(|c| rec("a", c, 0.5, Some((0.0, 0.0, 10.0, 10.0)))).collect();
        assert_eq!(evaluate_localization(&wrong, &truth).unwrap(), 1.0);
        assert_eq!(evaluate_localization(&[], &truth).unwrap(), 1.0);
    }

    #[test]
    fn duplicate_detection_ap() {
        let truth = vec![
            rec("a", 0, 1.0, Some((0.0, 0.0, 10.0, 10.0))),
            rec("b", 0, 1.0, Some((0.0, 0.0, 10.0, 10.0))),
            rec("b", 0, 1.0, Some((20.0, 20.0, 30.0, 30.0))),
        ];
        let preds = vec![
            rec("a", 0, 0.9, Some((0.0, 0.0, 10.0, 10.0))),
            rec("a", 0, 0.8, Some((0.0, 0.0, 10.0, 10.0))),
            rec("b", 0, 0.7, Some((20.0, 20.0, 30.0, 30.0))),
        ];
        // hits T F T: precision 1, 1/2, 2/3 -> envelope 1, 2/3, 2/3; recall 1/3, 1/3, 2/3.
        let r = evaluate_detection_map(&preds, &truth).unwrap();
        assert!((r.map - (1.0 / 3.0 + (1.0 / 3.0) * (2.0 / 3.0))).abs() < 1e-12);
        assert_eq!(evaluate_detection_map(&truth, &truth).unwrap().map, 1.0);
    }
}
