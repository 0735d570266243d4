//! Seeded inputs shared by the criterion benches.

use autoanno::ingest::GrayImage;
use autoanno::metrics::{GtBox, ScoredBox};
use autoanno::BBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Lane-marking pixels: `lanes` straight bands converging towards the
/// horizon, plus sparse noise.
pub fn lane_mask_points(width: usize, height: usize, lanes: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    let vanish = (width as f64 / 2.0, height as f64 * 0.4);
    for l in 0..lanes {
        let bottom = width as f64 * (l as f64 + 0.5) / lanes as f64;
        for y in (vanish.1 as usize)..height {
            let t = (y as f64 - vanish.1) / (height as f64 - vanish.1);
            let x = vanish.0 + (bottom - vanish.0) * t;
            for dx in 0..3 {
                let px = x as usize + dx;
                if px < width {
                    pts.push((px, y));
                }
            }
        }
    }
    for _ in 0..width * height / 500 {
        pts.push((rng.gen_range(0..width), rng.gen_range(0..height)));
    }
    pts
}

/// Flat grey frame with a block-textured square, optionally shifted.
pub fn textured_frame(width: usize, height: usize, origin: (usize, usize), size: usize, seed: u64) -> GrayImage {
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

pub fn cost_matrix(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows).map(|_| (0..cols).map(|_| rng.gen::<f64>()).collect()).collect()
}

/// Ground truth over `frames` frames and jittered, scored predictions with
/// some misses and clutter.
pub fn detections(frames: u64, per_frame: usize, seed: u64) -> (Vec<ScoredBox>, Vec<GtBox>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for frame in 0..frames {
        for _ in 0..per_frame {
            let x = rng.gen_range(0.0..1700.0);
            let y = rng.gen_range(0.0..1000.0);
            let bbox = BBox::new(x, y, x + 80.0, y + 60.0);
            gts.push(GtBox { frame, bbox });
            if rng.gen_bool(0.85) {
                let j = rng.gen_range(-8.0..8.0);
                preds.push(ScoredBox { frame, bbox: BBox::new(x + j, y - j, x + 80.0 + j, y + 60.0), score: rng.gen() });
            }
            if rng.gen_bool(0.1) {
                let cx = rng.gen_range(0.0..1700.0);
                preds.push(ScoredBox { frame, bbox: BBox::new(cx, y, cx + 50.0, y + 50.0), score: rng.gen::<f64>() * 0.5 });
            }
        }
    }
    (preds, gts)
}
