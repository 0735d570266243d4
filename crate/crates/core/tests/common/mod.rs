//! Independent oracles and generators shared by the property and acceptance suites.
#![allow(dead_code)]

use std::collections::BTreeMap;

use autoanno::ingest::GrayImage;
use autoanno::lanes::{HoughAccumulator, Line, THETA_BINS};
use autoanno::metrics::{MotCounts, MotFrame};
use autoanno::schema::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    *items.choose(rng).unwrap()
}

/// Box with two-decimal corners, as records are stored.
pub fn random_bbox(rng: &mut ChaCha8Rng) -> BBox {
    let minx = rng.gen_range(0..150_000) as f64 / 100.0;
    let miny = rng.gen_range(0..100_000) as f64 / 100.0;
    let w = rng.gen_range(1..40_000) as f64 / 100.0;
    let h = rng.gen_range(1..40_000) as f64 / 100.0;
    BBox::new(minx, miny, round_coord(minx + w), round_coord(miny + h))
}

pub fn random_props(rng: &mut ChaCha8Rng, category: Category) -> Option<Props> {
    Some(match category {
        Category::Vehicle => Props::Vehicle(VehicleProps {
            occlusion: pick(rng, Occlusion::ALL),
            bottom_occlusion: rng.gen(),
            direction: pick(rng, Direction::ALL),
            movement: pick(rng, Movement::ALL),
            lane: pick(rng, LaneId::ALL),
            lane_change: rng.gen(),
            rotation: pick(rng, Rotation::ALL),
            pose: pick(rng, Pose::ALL),
            lighting: pick(rng, Lighting::ALL),
        }),
        Category::TwoWheeler => Props::TwoWheeler(TwoWheelerProps {
            occlusion: pick(rng, Occlusion::ALL),
            head_occlusion: rng.gen(),
            feet_occlusion: rng.gen(),
            direction: pick(rng, Direction::ALL),
            movement: pick(rng, Movement::ALL),
            lane: pick(rng, LaneId::ALL),
            rotation: pick(rng, Rotation::ALL),
            pose: pick(rng, Pose::ALL),
            lighting: pick(rng, Lighting::ALL),
        }),
        Category::Pedestrian => Props::Pedestrian(PedestrianProps {
            occlusion: pick(rng, Occlusion::ALL),
            head_occlusion: rng.gen(),
            feet_occlusion: rng.gen(),
            direction: pick(rng, PedDirection::ALL),
            movement: pick(rng, Movement::ALL),
            height: pick(rng, Height::ALL),
            strange_pose: rng.gen(),
            lighting: pick(rng, Lighting::ALL),
        }),
        Category::NonDescript => return None,
    })
}

/// A valid document: increasing frame indices, unique track ids in
/// ascending order per frame, props matching each type's category.
pub fn random_document(rng: &mut ChaCha8Rng) -> AnnotationDocument {
    let mut doc = AnnotationDocument::new(format!("seq-{}", rng.gen_range(0..1000)));
    let mut index = 0u64;
    for _ in 0..rng.gen_range(0..6) {
        index += rng.gen_range(1..4);
        let mut ids: Vec<u64> = (1..30).collect();
        ids.shuffle(rng);
        let mut ids: Vec<u64> = ids[..rng.gen_range(0..6)].to_vec();
        ids.sort_unstable();
        let records = ids
            .into_iter()
            .map(|track_id| {
                let object_type = pick(rng, ObjectType::ALL);
                AnnotationRecord {
                    frame_index: index,
                    track_id,
                    object_type,
                    size: random_bbox(rng),
                    props: random_props(rng, object_type.category()),
                }
            })
            .collect();
        doc.frames.push(FrameRecords { index, records });
    }
    doc
}

/// Counts every (theta, rho) cell by testing each point against it.
pub fn exhaustive_hough_peak(points: &[(usize, usize)], width: usize, height: usize) -> (usize, i64, u32) {
    let max_rho = ((width * width + height * height) as f64).sqrt().ceil() as i64;
    let mut best = (0, -max_rho, 0);
    for t in 0..THETA_BINS {
        for rho in -max_rho..=max_rho {
            let votes = points
                .iter()
                .filter(|&&(x, y)| HoughAccumulator::rho_bin(x as f64, y as f64, t) == rho)
                .count() as u32;
            if votes > best.2 {
                best = (t, rho, votes);
            }
        }
    }
    best
}

/// Pixels within half a pixel of the line through `point` at angle `theta`
/// (radians), together with that line.
pub fn digital_line(theta: f64, point: (f64, f64), width: usize, height: usize) -> (Vec<(usize, usize)>, Line) {
    let (c, s) = (theta.cos(), theta.sin());
    let rho = point.0 * c + point.1 * s;
    let points = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .filter(|&(x, y)| (x as f64 * c + y as f64 * s - rho).abs() < 0.5)
        .collect();
    (points, Line::new(rho, theta))
}

/// Seeded random line through the interior of a `size` x `size` mask.
pub fn random_digital_line(rng: &mut ChaCha8Rng, size: usize) -> (Vec<(usize, usize)>, Line) {
    let theta = rng.gen_range(0.0..180.0f64).to_radians();
    let margin = size as f64 / 8.0;
    let point = (rng.gen_range(margin..size as f64 - margin), rng.gen_range(margin..size as f64 - margin));
    digital_line(theta, point, size, size)
}

pub fn mask_from(points: &[(usize, usize)], width: usize, height: usize) -> GrayImage {
    let mut m = GrayImage::new(width, height);
    for &(x, y) in points {
        m.set(x, y, 1);
    }
    m
}

/// Angle error in degrees and rho error in pixels between two lines,
/// accounting for the (rho, theta) ~ (-rho, theta - 180) identity.
pub fn line_error(found: &Line, truth: &Line) -> (f64, f64) {
    let d = (found.theta - truth.theta).to_degrees();
    if d > 90.0 {
        ((d - 180.0).abs(), (found.rho + truth.rho).abs())
    } else if d < -90.0 {
        ((d + 180.0).abs(), (found.rho + truth.rho).abs())
    } else {
        (d.abs(), (found.rho - truth.rho).abs())
    }
}

/// Minimum total cost over every injective assignment of the smaller side.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return 0.0;
    }
    fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, transposed: bool) -> f64 {
        let (rows, cols) = if transposed { (cost[0].len(), cost.len()) } else { (cost.len(), cost[0].len()) };
        if row == rows {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for c in 0..cols {
            if used[c] {
                continue;
            }
            used[c] = true;
            let here = if transposed { cost[c][row] } else { cost[row][c] };
            best = best.min(here + rec(cost, row + 1, used, transposed));
            used[c] = false;
        }
        best
    }
    if n <= m {
        rec(cost, 0, &mut vec![false; m], false)
    } else {
        rec(cost, 0, &mut vec![false; n], true)
    }
}

/// Every one-to-one matching of `gt` to `pred` pairs at or above `thr`.
fn all_matchings(frame: &MotFrame, thr: f64) -> Vec<Vec<(usize, usize)>> {
    fn rec(f: &MotFrame, thr: f64, g: usize, used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if g == f.gt.len() {
            out.push(cur.clone());
            return;
        }
        rec(f, thr, g + 1, used, cur, out);
        for p in 0..f.pred.len() {
            if !used[p] && f.gt[g].1.iou(&f.pred[p].1) >= thr {
                used[p] = true;
                cur.push((g, p));
                rec(f, thr, g + 1, used, cur, out);
                cur.pop();
                used[p] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(frame, thr, 0, &mut vec![false; frame.pred.len()], &mut Vec::new(), &mut out);
    out
}

/// CLEAR-MOT counts by enumerating every correspondence per frame: keep
/// last frame's pairs that still overlap, then take the largest matching
/// with the least total `1 - IoU`.
pub fn exhaustive_mot(frames: &[MotFrame], thr: f64) -> (MotCounts, BTreeMap<u64, (usize, usize)>) {
    let mut counts = MotCounts::default();
    let mut current: BTreeMap<u64, u64> = BTreeMap::new();
    let mut last: BTreeMap<u64, u64> = BTreeMap::new();
    let mut coverage: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for f in frames {
        let sticky: Vec<(usize, usize)> = f
            .gt
            .iter()
            .enumerate()
            .filter_map(|(g, (gid, gb))| {
                let p = f.pred.iter().position(|(pid, _)| Some(pid) == current.get(gid))?;
                (gb.iou(&f.pred[p].1) >= thr).then_some((g, p))
            })
            .collect();
        let cost = |m: &Vec<(usize, usize)>| m.iter().map(|&(g, p)| 1.0 - f.gt[g].1.iou(&f.pred[p].1)).sum::<f64>();
        let best = all_matchings(f, thr)
            .into_iter()
            .filter(|m| sticky.iter().all(|s| m.contains(s)))
            .min_by(|a, b| b.len().cmp(&a.len()).then(cost(a).total_cmp(&cost(b))))
            .unwrap_or_default();

        counts.gt_total += f.gt.len();
        counts.match_count += best.len();
        counts.false_negatives += f.gt.len() - best.len();
        counts.false_positives += f.pred.len() - best.len();
        current.clear();
        for &(g, p) in &best {
            let (gid, pid) = (f.gt[g].0, f.pred[p].0);
            if last.get(&gid).is_some_and(|&q| q != pid) {
                counts.idsw += 1;
            }
            last.insert(gid, pid);
            current.insert(gid, pid);
            counts.match_iou_sum += f.gt[g].1.iou(&f.pred[p].1);
        }
        for (g, (gid, _)) in f.gt.iter().enumerate() {
            let e = coverage.entry(*gid).or_default();
            e.0 += 1;
            e.1 += best.iter().any(|&(bg, _)| bg == g) as usize;
        }
    }
    (counts, coverage)
}

/// Image of flat road with a seeded 3 px block texture whose top-left corner is `origin`.
pub fn speckle_image(width: usize, height: usize, origin: (usize, usize), size: usize, seed: u64) -> GrayImage {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = size.div_ceil(3);
    let texture: Vec<u8> = (0..blocks * blocks).map(|_| rng.gen()).collect();
    let mut img = GrayImage::filled(width, height, 100);
    for y in 0..size {
        for x in 0..size {
            img.set(origin.0 + x, origin.1 + y, texture[(y / 3) * blocks + x / 3]);
        }
    }
    img
}
