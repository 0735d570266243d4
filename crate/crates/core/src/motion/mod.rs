//! Feature-based motion: ORB keypoints, brute-force matching, the
//! mean-displacement movement rule and lane-change detection.

mod fast;
mod orb;

use serde::Serialize;

use crate::ingest::GrayImage;
use crate::schema::{BBox, LaneId, Movement};

pub use fast::{fast_corners, roi_pixel_range, segment_test, Keypoint, ARC_LENGTH, BORDER_MARGIN, CIRCLE};
pub use orb::{
    angle_bin, brief_descriptor, brief_pattern, keypoint_orientation, Descriptor, ANGLE_BINS,
    DESCRIPTOR_BITS, ORIENTATION_RADIUS,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionConfig {
    pub fast_threshold: u8,
    pub max_keypoints: usize,
    pub max_hamming: u32,
    /// Fewer matches than this falls back to the box-centre displacement.
    pub min_matches: usize,
    /// Smallest ROI side on which features are extracted.
    pub min_roi_px: f64,
    pub movement_threshold_px: f64,
    pub lane_change_window: usize,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            fast_threshold: 20,
            max_keypoints: 64,
            max_hamming: 64,
            min_matches: 5,
            min_roi_px: 36.0,
            movement_threshold_px: 6.0,
            lane_change_window: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchPair {
    pub index_a: usize,
    pub index_b: usize,
    pub hamming: u32,
    pub pixel_distance: f64,
}

/// Oriented keypoints and their descriptors inside `roi`.
pub fn extract_features(
    image: &GrayImage,
    roi: &BBox,
    cfg: &MotionConfig,
) -> (Vec<Keypoint>, Vec<Descriptor>) {
    let mut kps = fast_corners(image, roi, cfg.fast_threshold, cfg.max_keypoints);
    for kp in &mut kps {
        kp.angle = keypoint_orientation(image, kp.x, kp.y);
    }
    let descs = kps.iter().map(|kp| brief_descriptor(image, kp)).collect();
    (kps, descs)
}

fn nearest(query: &Descriptor, set: &[Descriptor]) -> Option<(usize, u32)> {
    let mut best: Option<(usize, u32)> = None;
    for (i, d) in set.iter().enumerate() {
        let h = query.hamming(d);
        if best.is_none_or(|(_, b)| h < b) {
            best = Some((i, h));
        }
    }
    best
}

/// Exhaustive Hamming matching with cross-check: a pair is kept when each
/// side is the other's nearest neighbour (lowest index on ties) and the
/// distance is at most `max_hamming`.
pub fn bf_match(
    descs_a: &[Descriptor],
    kps_a: &[Keypoint],
    descs_b: &[Descriptor],
    kps_b: &[Keypoint],
    max_hamming: u32,
) -> Vec<MatchPair> {
    let mut out = Vec::new();
    for (ia, da) in descs_a.iter().enumerate() {
        let Some((ib, h)) = nearest(da, descs_b) else { break };
        if h > max_hamming {
            continue;
        }
        if nearest(&descs_b[ib], descs_a).map(|(back, _)| back) != Some(ia) {
            continue;
        }
        let (pa, pb) = (&kps_a[ia], &kps_b[ib]);
        out.push(MatchPair {
            index_a: ia,
            index_b: ib,
            hamming: h,
            pixel_distance: (pb.x - pa.x).hypot(pb.y - pa.y),
        });
    }
    out
}

/// Displacement measured between two observations of one object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MotionEstimate {
    pub mean_distance: f64,
    pub matches: usize,
    /// The box-centre distance was used because too few matches were found.
    pub fallback: bool,
}

pub fn center_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (bx - ax).hypot(by - ay)
}

/// Mean matched-keypoint displacement between the two ROIs.
pub fn estimate_motion(
    prev_frame: &GrayImage,
    curr_frame: &GrayImage,
    prev_bbox: &BBox,
    curr_bbox: &BBox,
    cfg: &MotionConfig,
) -> MotionEstimate {
    let fallback = MotionEstimate {
        mean_distance: center_distance(prev_bbox, curr_bbox),
        matches: 0,
        fallback: true,
    };
    let big_enough = |b: &BBox| b.width() >= cfg.min_roi_px && b.height() >= cfg.min_roi_px;
    if !big_enough(prev_bbox) || !big_enough(curr_bbox) {
        return fallback;
    }
    let (kps_a, descs_a) = extract_features(prev_frame, prev_bbox, cfg);
    let (kps_b, descs_b) = extract_features(curr_frame, curr_bbox, cfg);
    let matches = bf_match(&descs_a, &kps_a, &descs_b, &kps_b, cfg.max_hamming);
    if matches.len() < cfg.min_matches {
        return MotionEstimate { matches: matches.len(), ..fallback };
    }
    let mean = matches.iter().map(|m| m.pixel_distance).sum::<f64>() / matches.len() as f64;
    MotionEstimate { mean_distance: mean, matches: matches.len(), fallback: false }
}

/// Moving above the threshold; otherwise stationary in a numbered lane and
/// parked outside every lane.
pub fn movement_from_distance(mean_distance: f64, lane: LaneId, threshold_px: f64) -> Movement {
    if mean_distance > threshold_px {
        Movement::Moving
    } else if lane.is_numbered() {
        Movement::Stationary
    } else {
        Movement::Parked
    }
}

pub fn classify_movement(
    prev_frame: &GrayImage,
    curr_frame: &GrayImage,
    prev_bbox: &BBox,
    curr_bbox: &BBox,
    lane: LaneId,
    cfg: &MotionConfig,
) -> (Movement, f64) {
    let est = estimate_motion(prev_frame, curr_frame, prev_bbox, curr_bbox, cfg);
    (movement_from_distance(est.mean_distance, lane, cfg.movement_threshold_px), est.mean_distance)
}

/// Runs of at least `window` equal numbered lanes, merged when consecutive
/// runs name the same lane. Unknown entries are skipped.
pub fn stable_lanes(history: &[LaneId], window: usize) -> Vec<LaneId> {
    let numbered: Vec<LaneId> = history.iter().copied().filter(|l| l.is_numbered()).collect();
    let mut stable: Vec<LaneId> = Vec::new();
    let mut i = 0;
    while i < numbered.len() {
        let mut j = i;
        while j < numbered.len() && numbered[j] == numbered[i] {
            j += 1;
        }
        if j - i >= window && stable.last() != Some(&numbered[i]) {
            stable.push(numbered[i]);
        }
        i = j;
    }
    stable
}

/// True when the latest stable lane differs from the one before it.
pub fn detect_lane_change(history: &[LaneId], window: usize) -> bool {
    let stable = stable_lanes(history, window);
    stable.len() >= 2 && stable[stable.len() - 1] != stable[stable.len() - 2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use LaneId::*;

    #[test]
    fn movement_rule() {
        assert_eq!(movement_from_distance(7.2, Ego, 6.0), Movement::Moving);
        assert_eq!(movement_from_distance(3.0, Ego, 6.0), Movement::Stationary);
        assert_eq!(movement_from_distance(3.0, Unknown, 6.0), Movement::Parked);
        assert_eq!(movement_from_distance(6.0, Pos2, 6.0), Movement::Stationary);
        assert_eq!(movement_from_distance(6.0, Unknown, 6.0), Movement::Parked);
        assert_eq!(movement_from_distance(6.0 + 1e-9, Unknown, 6.0), Movement::Moving);
    }

    #[test]
    fn lane_change_examples() {
        assert!(!detect_lane_change(&[Ego, Ego, Ego, Ego], 3));
        assert!(!detect_lane_change(&[Ego, Ego, Ego, Pos1, Pos1], 3));
        assert!(detect_lane_change(&[Ego, Ego, Ego, Pos1, Pos1, Pos1], 3));
        assert!(!detect_lane_change(&[Ego, Ego, Ego, Pos1, Ego, Ego, Ego], 3));
    }

    #[test]
    fn unknown_is_ignored_for_stability() {
        assert!(!detect_lane_change(&[Unknown, Unknown, Unknown, Ego, Ego, Ego], 3));
        assert!(detect_lane_change(&[Neg1, Neg1, Unknown, Neg1, Ego, Unknown, Ego, Ego], 3));
        assert!(!detect_lane_change(&[], 3));
    }

    #[test]
    fn stays_true_after_change() {
        let h = [Neg1, Neg1, Neg1, Ego, Ego, Ego, Ego, Ego, Ego];
        assert!(detect_lane_change(&h, 3));
        assert_eq!(stable_lanes(&h, 3), vec![Neg1, Ego]);
    }

    fn kp(x: f64, y: f64) -> Keypoint {
        Keypoint { x, y, score: 1.0, angle: 0.0 }
    }

    #[test]
    fn identical_sets_match_identically() {
        let descs: Vec<Descriptor> =
            (0..5u64).map(|i| Descriptor([i * 0x1111_1111, !i, i << 7, i ^ 0xff])).collect();
        let kps: Vec<Keypoint> = (0..5).map(|i| kp(i as f64, 0.0)).collect();
        let m = bf_match(&descs, &kps, &descs, &kps, 64);
        assert_eq!(m.len(), 5);
        for (i, p) in m.iter().enumerate() {
            assert_eq!((p.index_a, p.index_b, p.hamming), (i, i, 0));
            assert_eq!(p.pixel_distance, 0.0);
        }
    }

    #[test]
    fn empty_sets_do_not_match() {
        let d = [Descriptor::default()];
        let k = [kp(0.0, 0.0)];
        assert!(bf_match(&[], &[], &d, &k, 64).is_empty());
        assert!(bf_match(&d, &k, &[], &[], 64).is_empty());
    }

    #[test]
    fn hamming_cut_rejects_distant_pairs() {
        let a = [Descriptor([0, 0, 0, 0])];
        let at_cut = [Descriptor([u64::MAX, 0, 0, 0])];
        let past_cut = [Descriptor([u64::MAX, 1, 0, 0])];
        let k = [kp(0.0, 0.0)];
        assert_eq!(bf_match(&a, &k, &at_cut, &k, 64).len(), 1);
        assert!(bf_match(&a, &k, &past_cut, &k, 64).is_empty());
        assert_eq!(bf_match(&a, &k, &past_cut, &k, 65).len(), 1);
    }

    #[test]
    fn small_roi_falls_back_to_center_distance() {
        let img = GrayImage::filled(100, 100, 50);
        let a = BBox::new(40.0, 40.0, 60.0, 90.0);
        let b = a.translate(3.0, 4.0);
        let (m, d) = classify_movement(&img, &img, &a, &b, Unknown, &MotionConfig::default());
        assert_eq!(d, 5.0);
        assert_eq!(m, Movement::Parked);
    }

    #[test]
    fn textureless_roi_falls_back() {
        let img = GrayImage::filled(200, 200, 50);
        let a = BBox::new(40.0, 40.0, 100.0, 100.0);
        let b = a.translate(8.0, 0.0);
        let est = estimate_motion(&img, &img, &a, &b, &MotionConfig::default());
        assert!(est.fallback);
        assert_eq!(est.mean_distance, 8.0);
    }

    fn speckle(w: usize, h: usize, ox: usize, oy: usize) -> GrayImage {
        // 3px blocks of pseudo-random intensity, anchored at (ox, oy)
        let mut img = GrayImage::filled(w, h, 100);
        for y in 0..h {
            for x in 0..w {
                if (ox..ox + 60).contains(&x) && (oy..oy + 60).contains(&y) {
                    let (bx, by) = (((x - ox) / 3) as u64, ((y - oy) / 3) as u64);
                    let mut v = bx.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ by.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
                    v ^= v >> 29;
                    v = v.wrapping_mul(0xBF58_476D_1CE4_E5B9);
                    v ^= v >> 32;
                    img.set(x, y, (v % 256) as u8);
                }
            }
        }
        img
    }

    #[test]
    fn translated_texture_reports_the_shift() {
        let cfg = MotionConfig::default();
        let a = speckle(160, 140, 40, 40);
        let b = speckle(160, 140, 47, 43);
        let roi_a = BBox::new(40.0, 40.0, 100.0, 100.0);
        let roi_b = roi_a.translate(7.0, 3.0);
        let est = estimate_motion(&a, &b, &roi_a, &roi_b, &cfg);
        assert!(!est.fallback, "{est:?}");
        assert!(est.matches >= cfg.min_matches);
        let expected = 7f64.hypot(3.0);
        assert!((est.mean_distance - expected).abs() < 0.5, "{est:?}");
        let (m, _) = classify_movement(&a, &b, &roi_a, &roi_b, Ego, &cfg);
        assert_eq!(m, Movement::Moving);
        let still = estimate_motion(&a, &a, &roi_a, &roi_a, &cfg);
        assert!(!still.fallback && still.mean_distance < 0.5, "{still:?}");
    }
}
