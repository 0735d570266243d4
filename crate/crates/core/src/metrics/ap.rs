//! Average precision over greedy score-ordered matching.

use serde::{Deserialize, Serialize};

use crate::schema::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Interpolation {
    /// Area under the precision envelope at every recall step.
    #[default]
    #[serde(rename = "all-point")]
    AllPoint,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    #[serde(rename = "11-point")]
    ElevenPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub frame: u64,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub frame: u64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PRPoint {
    pub recall: f64,
    pub precision: f64,
}

/// True-positive flags in descending score order. Each prediction claims
/// the unmatched ground truth of its frame with the highest IoU, if that
/// IoU reaches `iou_threshold`. Equal scores keep input order.
pub fn greedy_match(preds: &[ScoredBox], gts: &[GtBox], iou_threshold: f64) -> Vec<(f64, bool)> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|i| {
            let p = &preds[i];
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] || gt.frame != p.frame {
                    continue;
                }
                let iou = p.bbox.iou(&gt.bbox);
                if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            (p.score, best.is_some())
        })
        .collect()
}

/// One precision/recall point per distinct score, highest score first.
pub fn pr_curve(preds: &[ScoredBox], gts: &[GtBox], iou_threshold: f64) -> Vec<PRPoint> {
    let flags = greedy_match(preds, gts, iou_threshold);
    let total = gts.len() as f64;
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &(score, hit)) in flags.iter().enumerate() {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = flags.get(k + 1).is_none_or(|&(next, _)| next != score);
        if last_of_group {
            points.push(PRPoint {
                recall: if total > 0.0 { tp as f64 / total } else { 0.0 },
                precision: tp as f64 / (tp + fp) as f64,
            });
        }
    }
    points
}

/// Area under the precision envelope of `points`, in [0, 1].
pub fn envelope_area(points: &[PRPoint], interpolation: Interpolation) -> f64 {
    // envelope[k] = max precision at recall >= recall[k]
    let mut envelope: Vec<f64> = points.iter().map(|p| p.precision).collect();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    match interpolation {
        Interpolation::AllPoint => {
            let mut area = 0.0;
            let mut prev_recall = 0.0;
            for (p, e) in points.iter().zip(&envelope) {
                area += (p.recall - prev_recall) * e;
                prev_recall = p.recall;
            }
            area
        }
        Interpolation::ElevenPoint => {
            let sum: f64 = (0..=10)
                .map(|i| {
                    let r = i as f64 / 10.0;
                    points
                        .iter()
                        .zip(&envelope)
                        .find(|(p, _)| p.recall >= r - 1e-12)
                        .map_or(0.0, |(_, e)| *e)
                })
                .sum();
            sum / 11.0
        }
    }
}

/// AP on a 0-100 scale; `None` when there is neither ground truth nor a
/// prediction, and 0 when only one side is empty.
pub fn average_precision(
    preds: &[ScoredBox],
    gts: &[GtBox],
    iou_threshold: f64,
    interpolation: Interpolation,
) -> Option<f64> {
    if gts.is_empty() && preds.is_empty() {
        return None;
    }
    if gts.is_empty() || preds.is_empty() {
        return Some(0.0);
    }
    Some(100.0 * envelope_area(&pr_curve(preds, gts, iou_threshold), interpolation))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(frame: u64, x: f64) -> GtBox {
        GtBox { frame, bbox: BBox::new(x, 0.0, x + 10.0, 10.0) }
    }

    fn pred(frame: u64, x: f64, score: f64) -> ScoredBox {
        ScoredBox { frame, bbox: BBox::new(x, 0.0, x + 10.0, 10.0), score }
    }

    #[test]
    fn perfect_single_detection() {
        let ap = average_precision(&[pred(0, 0.0, 0.9)], &[gt(0, 0.0)], 0.5, Interpolation::AllPoint);
        assert_eq!(ap, Some(100.0));
    }

    #[test]
    fn empty_sides() {
        assert_eq!(average_precision(&[], &[gt(0, 0.0)], 0.5, Interpolation::AllPoint), Some(0.0));
        assert_eq!(average_precision(&[pred(0, 0.0, 1.0)], &[], 0.5, Interpolation::AllPoint), Some(0.0));
        assert_eq!(average_precision(&[], &[], 0.5, Interpolation::AllPoint), None);
    }

    #[test]
    fn tp_fp_tp_by_hand() {
        let gts = [gt(0, 0.0), gt(0, 100.0)];
        let preds = [pred(0, 0.0, 0.9), pred(0, 50.0, 0.8), pred(0, 100.0, 0.7)];
        let pts = pr_curve(&preds, &gts, 0.5);
        assert_eq!(pts.len(), 3);
        assert_eq!((pts[0].recall, pts[0].precision), (0.5, 1.0));
        assert_eq!((pts[1].recall, pts[1].precision), (0.5, 0.5));
        assert_eq!(pts[2].recall, 1.0);
        assert!((pts[2].precision - 2.0 / 3.0).abs() < 1e-12);
        // envelope: 1.0 over [0, 0.5], 2/3 over (0.5, 1]
        let ap = average_precision(&preds, &gts, 0.5, Interpolation::AllPoint).unwrap();
        assert!((ap - 100.0 * (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-9);
        // eleven-point: six recall levels at 1.0, five at 2/3
        let ap11 = average_precision(&preds, &gts, 0.5, Interpolation::ElevenPoint).unwrap();
        assert!((ap11 - 100.0 * (6.0 + 5.0 * 2.0 / 3.0) / 11.0).abs() < 1e-9);
    }

    #[test]
    fn equal_scores_form_one_threshold() {
        let gts = [gt(0, 0.0), gt(0, 100.0)];
        let preds = [pred(0, 50.0, 0.5), pred(0, 0.0, 0.5), pred(0, 100.0, 0.5)];
        let pts = pr_curve(&preds, &gts, 0.5);
        assert_eq!(pts.len(), 1);
        let ap = average_precision(&preds, &gts, 0.5, Interpolation::AllPoint).unwrap();
        assert!((ap - 100.0 * 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn frames_do_not_cross_match() {
        let ap = average_precision(&[pred(1, 0.0, 0.9)], &[gt(0, 0.0)], 0.5, Interpolation::AllPoint);
        assert_eq!(ap, Some(0.0));
    }

    #[test]
    fn duplicate_detection_is_a_false_positive() {
        let preds = [pred(0, 0.0, 0.9), pred(0, 1.0, 0.8)];
        let flags = greedy_match(&preds, &[gt(0, 0.0)], 0.5);
        assert_eq!(flags, vec![(0.9, true), (0.8, false)]);
    }
}
