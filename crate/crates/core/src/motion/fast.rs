//! FAST-9 segment-test corners with 3x3 non-maximum suppression.

use serde::Serialize;

use crate::ingest::GrayImage;
use crate::schema::BBox;

/// Radius-3 Bresenham circle, clockwise from 12 o'clock.
pub const CIRCLE: [(i64, i64); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Contiguous circle pixels required by the segment test.
pub const ARC_LENGTH: usize = 9;

/// Keypoints keep this distance from the image border so a rotated
/// descriptor window always fits.
pub const BORDER_MARGIN: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
    pub angle: f64,
}

/// Corner score at `(x, y)`: the sum of absolute differences over the
/// qualifying arc, or `None` when the segment test fails.
///
/// The circle must lie inside the image.
pub fn segment_test(image: &GrayImage, x: usize, y: usize, threshold: u8) -> Option<u32> {
    let center = image.get(x, y) as i32;
    let t = threshold as i32;
    let ring: [i32; 16] = std::array::from_fn(|i| {
        let (dx, dy) = CIRCLE[i];
        image.get((x as i64 + dx) as usize, (y as i64 + dy) as usize) as i32
    });
    // +1 brighter, -1 darker, 0 similar
    let class: [i8; 16] = std::array::from_fn(|i| {
        if ring[i] > center + t {
            1
        } else if ring[i] < center - t {
            -1
        } else {
            0
        }
    });
    for sign in [1i8, -1] {
        if class.iter().all(|&c| c == sign) {
            return Some(ring.iter().map(|&p| p.abs_diff(center)).sum());
        }
        // start just after a non-matching pixel so runs never wrap unseen
        let Some(start) = (0..16).find(|&i| class[i] != sign) else { continue };
        let mut run_sum = 0u32;
        let mut run_len = 0usize;
        for k in 1..=16 {
            let i = (start + k) % 16;
            if class[i] == sign {
                run_len += 1;
                run_sum += ring[i].abs_diff(center);
            } else {
                if run_len >= ARC_LENGTH {
                    return Some(run_sum);
                }
                run_len = 0;
                run_sum = 0;
            }
        }
        if run_len >= ARC_LENGTH {
            return Some(run_sum);
        }
    }
    None
}

/// Inclusive pixel ranges of a box clipped to the image minus `margin`.
pub fn roi_pixel_range(
    image: &GrayImage,
    roi: &BBox,
    margin: usize,
) -> Option<((usize, usize), (usize, usize))> {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let m = margin as i64;
    let x0 = (roi.minx.ceil() as i64).max(m);
    let y0 = (roi.miny.ceil() as i64).max(m);
    let x1 = (roi.maxx.ceil() as i64 - 1).min(w - 1 - m);
    let y1 = (roi.maxy.ceil() as i64 - 1).min(h - 1 - m);
    (x0 <= x1 && y0 <= y1).then(|| ((x0 as usize, x1 as usize), (y0 as usize, y1 as usize)))
}

/// FAST corners inside `roi`, strongest first, at most `max_keypoints`.
///
/// A candidate survives suppression when every 8-neighbour candidate has a
/// lower score or an equal score later in raster order.
pub fn fast_corners(
    image: &GrayImage,
    roi: &BBox,
    threshold: u8,
    max_keypoints: usize,
) -> Vec<Keypoint> {
    let Some(((x0, x1), (y0, y1))) = roi_pixel_range(image, roi, BORDER_MARGIN) else {
        return Vec::new();
    };
    let w = x1 - x0 + 1;
    let h = y1 - y0 + 1;
    let mut scores = vec![0u32; w * h];
    for y in y0..=y1 {
        for x in x0..=x1 {
            if let Some(s) = segment_test(image, x, y, threshold) {
                scores[(y - y0) * w + (x - x0)] = s;
            }
        }
    }
    let mut corners = Vec::new();
    for ly in 0..h {
        for lx in 0..w {
            let s = scores[ly * w + lx];
            if s == 0 {
                continue;
            }
            let mut keep = true;
            'nb: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (lx as i64 + dx, ly as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let ns = scores[ny as usize * w + nx as usize];
                    let later = (dy, dx) > (0, 0);
                    if ns > s || (ns == s && !later) {
                        keep = false;
                        break 'nb;
                    }
                }
            }
            if keep {
                corners.push(((x0 + lx) as f64, (y0 + ly) as f64, s));
            }
        }
    }
    // stable sort keeps raster order among equal scores
    corners.sort_by(|a, b| b.2.cmp(&a.2));
    corners.truncate(max_keypoints);
    corners
        .into_iter()
        .map(|(x, y, s)| Keypoint { x, y, score: s as f64, angle: 0.0 })
        .collect()
}
