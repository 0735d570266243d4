//! Intensity-centroid orientation and steered BRIEF descriptors.

use std::sync::OnceLock;

use crate::ingest::GrayImage;

use super::fast::Keypoint;

pub const ORIENTATION_RADIUS: i64 = 15;
pub const DESCRIPTOR_BITS: usize = 256;
pub const ANGLE_BINS: usize = 30;

static PATTERN_TEXT: &str = include_str!("../../fixtures/brief_pattern.txt");

/// 256-bit binary descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Descriptor(pub [u64; 4]);

impl Descriptor {
    pub fn bit(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a ^ b).count_ones()).sum()
    }
}

type PointPair = ((i64, i64), (i64, i64));

/// The 256 sampling pairs, one point per fixture line.
pub fn brief_pattern() -> &'static [PointPair] {
    static PATTERN: OnceLock<Vec<PointPair>> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let points: Vec<(i64, i64)> = PATTERN_TEXT
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let mut it = l.split_whitespace().map(|v| v.parse::<i64>().expect("pattern coordinate"));
                (it.next().expect("x"), it.next().expect("y"))
            })
            .collect();
        assert_eq!(points.len(), 2 * DESCRIPTOR_BITS, "pattern fixture must hold 512 points");
        points.chunks(2).map(|c| (c[0], c[1])).collect()
    })
}

fn rotate_point((x, y): (i64, i64), angle: f64) -> (i64, i64) {
    let (s, c) = angle.sin_cos();
    let (x, y) = (x as f64, y as f64);
    ((x * c - y * s).round() as i64, (x * s + y * c).round() as i64)
}

/// Orientation bin of an angle: 12 degree steps, nearest bin.
pub fn angle_bin(angle: f64) -> usize {
    let step = std::f64::consts::TAU / ANGLE_BINS as f64;
    ((angle / step).round() as i64).rem_euclid(ANGLE_BINS as i64) as usize
}

fn steered_patterns() -> &'static [Vec<PointPair>] {
    static STEERED: OnceLock<Vec<Vec<PointPair>>> = OnceLock::new();
    STEERED.get_or_init(|| {
        let step = std::f64::consts::TAU / ANGLE_BINS as f64;
        (0..ANGLE_BINS)
            .map(|b| {
                let a = b as f64 * step;
                brief_pattern()
                    .iter()
                    .map(|&(p, q)| (rotate_point(p, a), rotate_point(q, a)))
                    .collect()
            })
            .collect()
    })
}

/// `atan2(m01, m10)` of the intensity moments over the radius-15 disc
/// centred on the keypoint. Pixels outside the image count as zero.
pub fn keypoint_orientation(image: &GrayImage, x: f64, y: f64) -> f64 {
    let (cx, cy) = (x.round() as i64, y.round() as i64);
    let r2 = ORIENTATION_RADIUS * ORIENTATION_RADIUS;
    let (mut m10, mut m01) = (0i64, 0i64);
    for dy in -ORIENTATION_RADIUS..=ORIENTATION_RADIUS {
        for dx in -ORIENTATION_RADIUS..=ORIENTATION_RADIUS {
            if dx * dx + dy * dy > r2 {
                continue;
            }
            let v = image.get_signed(cx + dx, cy + dy).unwrap_or(0) as i64;
            m10 += dx * v;
            m01 += dy * v;
        }
    }
    if m10 == 0 && m01 == 0 {
        0.0
    } else {
        (m01 as f64).atan2(m10 as f64)
    }
}

/// Bit `i` is set when `I(p_i) < I(q_i)` on the pattern steered by the keypoint angle.
pub fn brief_descriptor(image: &GrayImage, kp: &Keypoint) -> Descriptor {
    let (cx, cy) = (kp.x.round() as i64, kp.y.round() as i64);
    let pattern = &steered_patterns()[angle_bin(kp.angle)];
    let sample = |(dx, dy): (i64, i64)| image.get_signed(cx + dx, cy + dy).unwrap_or(0);
    let mut d = Descriptor::default();
    for (i, &(p, q)) in pattern.iter().enumerate() {
        if sample(p) < sample(q) {
            d.set(i);
        }
    }
    d
}
