//! Lane boundaries from instance masks, lane numbering around the ego
//! vehicle, and bottom-edge lane assignment.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::ingest::{GrayImage, SceneConfig};
use crate::schema::{BBox, LaneId};

pub const MAX_BOUNDARIES: usize = 6;
pub const THETA_BINS: usize = 180;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LaneError {
    #[error("degenerate instance: fewer than 2 foreground pixels")]
    DegenerateInstance,
    #[error("insufficient boundaries: {0} found, at least 2 needed")]
    InsufficientBoundaries(usize),
    #[error("too many boundaries: {0} found, at most {MAX_BOUNDARIES} supported")]
    TooManyBoundaries(usize),
    #[error("lane instance labels are not contiguous from 1")]
    NonContiguousLabels,
    #[error("boundary {0} is horizontal")]
    HorizontalBoundary(usize),
    #[error("boundaries {0} and {1} meet the bottom row within 1 px")]
    CoincidentBoundaries(usize, usize),
}

/// Line `x*cos(theta) + y*sin(theta) = rho`, theta in `[0, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Line {
    pub rho: f64,
    pub theta: f64,
}

impl Line {
    /// Normalizes theta into `[0, pi)`, flipping rho's sign when theta wraps.
    pub fn new(rho: f64, theta: f64) -> Self {
        let pi = std::f64::consts::PI;
        let turns = (theta / pi).floor();
        let mut theta = theta - turns * pi;
        let mut rho = if (turns as i64) % 2 == 0 { rho } else { -rho };
        if theta >= pi {
            theta -= pi;
            rho = -rho;
        }
        Self { rho, theta }
    }

    /// Line through two distinct points.
    pub fn through(a: (f64, f64), b: (f64, f64)) -> Self {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len = dx.hypot(dy);
        let (nx, ny) = (-dy / len, dx / len);
        Self::new(nx * a.0 + ny * a.1, ny.atan2(nx))
    }

    /// Column where the line crosses row `y`; `None` for horizontal lines.
    pub fn x_at(&self, y: f64) -> Option<f64> {
        let c = self.theta.cos();
        (c.abs() > 1e-9).then(|| (self.rho - y * self.theta.sin()) / c)
    }
}

/// Hough vote table: 1 degree theta bins over `[0, 180)`, 1 px rho bins over `[-D, D]`.
pub struct HoughAccumulator {
    votes: Vec<u32>,
    max_rho: i64,
}

impl HoughAccumulator {
    pub fn new(width: usize, height: usize) -> Self {
        let max_rho = ((width * width + height * height) as f64).sqrt().ceil() as i64;
        let n_rho = (2 * max_rho + 1) as usize;
        Self { votes: vec![0; THETA_BINS * n_rho], max_rho }
    }

    fn n_rho(&self) -> usize {
        (2 * self.max_rho + 1) as usize
    }

    /// Rho bin of a point for theta bin `t`; a bin `k` covers `[k, k+1)`.
    pub fn rho_bin(x: f64, y: f64, theta_bin: usize) -> i64 {
        let theta = (theta_bin as f64).to_radians();
        (x * theta.cos() + y * theta.sin() + 1e-9).floor() as i64
    }

    pub fn vote(&mut self, points: &[(usize, usize)]) {
        let n_rho = self.n_rho();
        let trig: Vec<(f64, f64)> = (0..THETA_BINS)
            .map(|t| {
                let th = (t as f64).to_radians();
                (th.cos(), th.sin())
            })
            .collect();
        for &(x, y) in points {
            let (x, y) = (x as f64, y as f64);
            for (t, &(c, s)) in trig.iter().enumerate() {
                let r = (x * c + y * s + 1e-9).floor() as i64;
                self.votes[t * n_rho + (r + self.max_rho) as usize] += 1;
            }
        }
    }

    pub fn votes(&self, theta_bin: usize, rho: i64) -> u32 {
        if rho.abs() > self.max_rho {
            return 0;
        }
        self.votes[theta_bin * self.n_rho() + (rho + self.max_rho) as usize]
    }

    /// Maximum cell as `(theta_bin, rho, votes)`; ties go to smaller theta, then smaller rho.
    pub fn peak(&self) -> (usize, i64, u32) {
        let n_rho = self.n_rho();
        let mut best = (0, -self.max_rho, 0);
        for t in 0..THETA_BINS {
            for (i, &v) in self.votes[t * n_rho..(t + 1) * n_rho].iter().enumerate() {
                if v > best.2 {
                    best = (t, i as i64 - self.max_rho, v);
                }
            }
        }
        best
    }
}

/// Foreground pixel coordinates grouped by instance label.
pub fn instance_points(mask: &GrayImage) -> BTreeMap<u8, Vec<(usize, usize)>> {
    let mut out: BTreeMap<u8, Vec<(usize, usize)>> = BTreeMap::new();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            let v = mask.get(x, y);
            if v != 0 {
                out.entry(v).or_default().push((x, y));
            }
        }
    }
    out
}

fn fit_points(points: &[(usize, usize)], width: usize, height: usize) -> Result<Line, LaneError> {
    if points.len() < 2 {
        return Err(LaneError::DegenerateInstance);
    }
    let mut acc = HoughAccumulator::new(width, height);
    acc.vote(points);
    let (t, rho, _) = acc.peak();
    Ok(Line { rho: rho as f64, theta: (t as f64).to_radians() })
}

/// Strongest straight line through the nonzero pixels of a binary mask.
pub fn hough_lines(mask: &GrayImage) -> Result<Line, LaneError> {
    let points: Vec<(usize, usize)> = (0..mask.height())
        .flat_map(|y| (0..mask.width()).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y) != 0)
        .collect();
    fit_points(&points, mask.width(), mask.height())
}

/// Interior lane between two adjacent boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lane {
    pub id: LaneId,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LaneDiagnostics {
    /// The ego anchor was outside every interior lane and the nearest lane was used.
    pub ego_outside: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneModel {
    /// Ordered left to right by their column at the bottom row.
    pub boundaries: Vec<Line>,
    pub lanes: Vec<Lane>,
    pub ego_lane_index: usize,
    pub bottom_y: f64,
    pub diagnostics: LaneDiagnostics,
}

impl LaneModel {
    /// Orders boundaries, numbers the interior lanes and locates the ego lane.
    pub fn from_boundaries(lines: Vec<Line>, cfg: &SceneConfig) -> Result<Self, LaneError> {
        if lines.len() < 2 {
            return Err(LaneError::InsufficientBoundaries(lines.len()));
        }
        if lines.len() > MAX_BOUNDARIES {
            return Err(LaneError::TooManyBoundaries(lines.len()));
        }
        let bottom_y = cfg.image_height.saturating_sub(1) as f64;
        let mut keyed = Vec::with_capacity(lines.len());
        for (i, line) in lines.into_iter().enumerate() {
            let x = line.x_at(bottom_y).ok_or(LaneError::HorizontalBoundary(i))?;
            keyed.push((x, i, line));
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in keyed.windows(2) {
            if w[1].0 - w[0].0 < 1.0 {
                return Err(LaneError::CoincidentBoundaries(w[0].1, w[1].1));
            }
        }
        let xs: Vec<f64> = keyed.iter().map(|k| k.0).collect();
        let anchor = cfg.ego_anchor_x;
        let n_lanes = xs.len() - 1;
        let (ego, ego_outside) = match (0..n_lanes).find(|&j| xs[j] <= anchor && anchor < xs[j + 1]) {
            Some(j) => (j, false),
            None if anchor < xs[0] => (0, true),
            None => (n_lanes - 1, true),
        };
        let lanes = (0..n_lanes)
            .map(|j| Lane { id: LaneId::from_offset(j as i64 - ego as i64), left: j, right: j + 1 })
            .collect();
        Ok(Self {
            boundaries: keyed.into_iter().map(|k| k.2).collect(),
            lanes,
            ego_lane_index: ego,
            bottom_y,
            diagnostics: LaneDiagnostics { ego_outside },
        })
    }

    /// Lane intervals `(id, left, right)` at row `y`. Crossed boundaries give an empty interval.
    pub fn intervals_at(&self, y: f64) -> Vec<(LaneId, f64, f64)> {
        let xs: Vec<f64> =
            self.boundaries.iter().map(|b| b.x_at(y).unwrap_or(f64::NAN)).collect();
        self.lanes
            .iter()
            .map(|lane| {
                let (l, r) = (xs[lane.left], xs[lane.right]);
                if r > l {
                    (lane.id, l, r)
                } else {
                    (lane.id, l, l)
                }
            })
            .collect()
    }

    pub fn bottom_intercepts(&self) -> Vec<f64> {
        self.boundaries.iter().filter_map(|b| b.x_at(self.bottom_y)).collect()
    }
}

/// Fits one boundary per mask instance and builds the lane model.
pub fn build_lane_model(mask: &GrayImage, cfg: &SceneConfig) -> Result<LaneModel, LaneError> {
    let instances = instance_points(mask);
    let k = instances.len();
    if instances.keys().enumerate().any(|(i, &label)| label as usize != i + 1) {
        return Err(LaneError::NonContiguousLabels);
    }
    if k < 2 {
        return Err(LaneError::InsufficientBoundaries(k));
    }
    if k > MAX_BOUNDARIES {
        return Err(LaneError::TooManyBoundaries(k));
    }
    let lines = instances
        .values()
        .map(|pts| fit_points(pts, mask.width(), mask.height()))
        .collect::<Result<Vec<_>, _>>()?;
    LaneModel::from_boundaries(lines, cfg)
}

/// Lane holding the largest share of the box's bottom edge; unknown when
/// the edge overlaps no numbered lane.
pub fn assign_lane(bbox: &BBox, model: &LaneModel) -> LaneId {
    let mut best: Option<(f64, LaneId)> = None;
    for (id, l, r) in model.intervals_at(bbox.maxy) {
        let Some(offset) = id.offset() else { continue };
        let overlap = bbox.maxx.min(r) - bbox.minx.max(l);
        if !(overlap > 0.0) {
            continue;
        }
        let better = match best {
            None => true,
            Some((o, cur)) => {
                let cur_off = cur.offset().unwrap_or(0);
                overlap > o
                    || (overlap == o && (offset.abs(), offset) < (cur_off.abs(), cur_off))
            }
        };
        if better {
            best = Some((overlap, id));
        }
    }
    best.map_or(LaneId::Unknown, |(_, id)| id)
}

/// Per-frame lane diagnostics for the optional dump.
#[derive(Debug, Clone, Serialize)]
pub struct LaneDump {
    pub frame: u64,
    pub boundaries: Vec<Line>,
    pub bottom_intervals: Vec<(LaneId, f64, f64)>,
    pub ego_outside: bool,
    pub error: Option<String>,
}

impl LaneDump {
    pub fn from_result(frame: u64, result: &Result<LaneModel, LaneError>) -> Self {
        match result {
            Ok(m) => Self {
                frame,
                boundaries: m.boundaries.clone(),
                bottom_intervals: m.intervals_at(m.bottom_y),
                ego_outside: m.diagnostics.ego_outside,
                error: None,
            },
            Err(e) => Self {
                frame,
                boundaries: vec![],
                bottom_intervals: vec![],
                ego_outside: false,
                error: Some(e.to_string()),
            },
        }
    }
}
