//! CLEAR-MOT counts with sticky correspondences.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::schema::BBox;

use super::match_boxes;

/// Objects present in one frame as `(id, box)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MotFrame {
    pub gt: Vec<(u64, BBox)>,
    pub pred: Vec<(u64, BBox)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MotCounts {
    pub gt_total: usize,
    #[serde(rename = "fn")]
    pub false_negatives: usize,
    #[serde(rename = "fp")]
    pub false_positives: usize,
    pub idsw: usize,
    pub match_iou_sum: f64,
    pub match_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MotSummary {
    pub counts: MotCounts,
    pub mota: Option<f64>,
    pub motp: Option<f64>,
    pub mostly_tracked: Option<f64>,
    pub mostly_lost: Option<f64>,
}

/// Fraction of a trajectory's frames that must be matched to count as
/// mostly tracked, and the fraction at or below which it is mostly lost.
pub const MOSTLY_TRACKED: f64 = 0.8;
pub const MOSTLY_LOST: f64 = 0.2;

/// Per frame: keep last frame's pairs that still overlap by `iou_threshold`,
/// fill the rest by maximum-cardinality minimum-cost assignment, and count
/// an identity switch when a ground-truth object's partner differs from the
/// one it was last matched to.
pub fn mot_metrics(frames: &[MotFrame], iou_threshold: f64) -> MotSummary {
    let mut counts = MotCounts::default();
    let mut current: BTreeMap<u64, u64> = BTreeMap::new();
    let mut last_partner: BTreeMap<u64, u64> = BTreeMap::new();
    // gt id -> (frames present, frames matched)
    let mut coverage: BTreeMap<u64, (usize, usize)> = BTreeMap::new();

    for frame in frames {
        counts.gt_total += frame.gt.len();
        let mut gt_used = vec![false; frame.gt.len()];
        let mut pred_used = vec![false; frame.pred.len()];
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();

        for (gi, (gid, gb)) in frame.gt.iter().enumerate() {
            let Some(pid) = current.get(gid) else { continue };
            let Some(pi) = frame.pred.iter().position(|(id, _)| id == pid) else { continue };
            if pred_used[pi] {
                continue;
            }
            let iou = gb.iou(&frame.pred[pi].1);
            if iou >= iou_threshold {
                gt_used[gi] = true;
                pred_used[pi] = true;
                pairs.push((gi, pi, iou));
            }
        }

        let free_gt: Vec<usize> = (0..frame.gt.len()).filter(|&i| !gt_used[i]).collect();
        let free_pred: Vec<usize> = (0..frame.pred.len()).filter(|&i| !pred_used[i]).collect();
        let gb: Vec<BBox> = free_gt.iter().map(|&i| frame.gt[i].1).collect();
        let pb: Vec<BBox> = free_pred.iter().map(|&i| frame.pred[i].1).collect();
        for (a, b, iou) in match_boxes(&gb, &pb, iou_threshold) {
            pairs.push((free_gt[a], free_pred[b], iou));
        }

        let mut next = BTreeMap::new();
        for &(gi, pi, iou) in &pairs {
            let (gid, pid) = (frame.gt[gi].0, frame.pred[pi].0);
            if last_partner.get(&gid).is_some_and(|&prev| prev != pid) {
                counts.idsw += 1;
            }
            last_partner.insert(gid, pid);
            next.insert(gid, pid);
            counts.match_iou_sum += iou;
        }
        current = next;
        counts.match_count += pairs.len();
        counts.false_negatives += frame.gt.len() - pairs.len();
        counts.false_positives += frame.pred.len() - pairs.len();

        for (gi, (gid, _)) in frame.gt.iter().enumerate() {
            let entry = coverage.entry(*gid).or_default();
            entry.0 += 1;
            if pairs.iter().any(|&(g, _, _)| g == gi) {
                entry.1 += 1;
            }
        }
    }

    let trajectories = coverage.len() as f64;
    let share = |pred: &dyn Fn(f64) -> bool| {
        (trajectories > 0.0).then(|| {
            100.0
                * coverage.values().filter(|(n, m)| pred(*m as f64 / *n as f64)).count() as f64
                / trajectories
        })
    };
    MotSummary {
        counts,
        mota: (counts.gt_total > 0).then(|| {
            let errors = counts.false_negatives + counts.false_positives + counts.idsw;
            100.0 * (1.0 - errors as f64 / counts.gt_total as f64)
        }),
        motp: (counts.match_count > 0)
            .then(|| 100.0 * counts.match_iou_sum / counts.match_count as f64),
        mostly_tracked: share(&|r| r >= MOSTLY_TRACKED),
        mostly_lost: share(&|r| r <= MOSTLY_LOST),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64) -> BBox {
        BBox::new(x, 0.0, x + 10.0, 10.0)
    }

    #[test]
    fn identical_tracks_are_perfect() {
        let frames: Vec<MotFrame> = (0..4)
            .map(|t| {
                let objs = vec![(1, b(t as f64)), (2, b(50.0 + t as f64))];
                MotFrame { gt: objs.clone(), pred: objs }
            })
            .collect();
        let s = mot_metrics(&frames, 0.5);
        assert_eq!(s.mota, Some(100.0));
        assert_eq!(s.motp, Some(100.0));
        assert_eq!(s.mostly_tracked, Some(100.0));
        assert_eq!(s.mostly_lost, Some(0.0));
    }

    #[test]
    fn one_miss_one_false_positive_one_switch() {
        // A at x=0 throughout, B at x=50; B missed at frame 1 with a stray
        // box elsewhere, then picked up under a new id
        let frames = vec![
            MotFrame { gt: vec![(1, b(0.0)), (2, b(50.0))], pred: vec![(11, b(0.0)), (12, b(50.0))] },
            MotFrame { gt: vec![(1, b(0.0)), (2, b(50.0))], pred: vec![(11, b(0.0)), (13, b(200.0))] },
            MotFrame { gt: vec![(1, b(0.0)), (2, b(50.0))], pred: vec![(11, b(0.0)), (14, b(50.0))] },
        ];
        let s = mot_metrics(&frames, 0.5);
        assert_eq!(
            (s.counts.false_negatives, s.counts.false_positives, s.counts.idsw, s.counts.gt_total),
            (1, 1, 1, 6)
        );
        assert_eq!(s.mota, Some(50.0));
    }

    #[test]
    fn sticky_match_survives_a_better_candidate() {
        // pred 11 still overlaps A enough, so it keeps A although 12 fits better
        let a = b(0.0);
        let frames = vec![
            MotFrame { gt: vec![(1, a)], pred: vec![(11, a)] },
            MotFrame { gt: vec![(1, a)], pred: vec![(11, b(2.0)), (12, a)] },
        ];
        let s = mot_metrics(&frames, 0.5);
        assert_eq!(s.counts.idsw, 0);
        assert_eq!(s.counts.false_positives, 1);
    }

    #[test]
    fn mostly_lost_boundary_is_inclusive() {
        let frames: Vec<MotFrame> = (0..5)
            .map(|t| MotFrame {
                gt: vec![(1, b(0.0))],
                pred: if t == 0 { vec![(9, b(0.0))] } else { vec![] },
            })
            .collect();
        let s = mot_metrics(&frames, 0.5);
        assert_eq!(s.mostly_lost, Some(100.0));
        assert_eq!(s.mostly_tracked, Some(0.0));
    }

    #[test]
    fn no_ground_truth_leaves_mota_undefined() {
        let s = mot_metrics(&[MotFrame { gt: vec![], pred: vec![(1, b(0.0))] }], 0.5);
        assert_eq!(s.mota, None);
        assert_eq!(s.counts.false_positives, 1);
    }
}
