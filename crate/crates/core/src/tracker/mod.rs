//! Multi-object tracking: Kalman prediction, Hungarian IoU association and
//! the track lifecycle that hands out persistent ids.

mod hungarian;
mod kalman;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::ingest::Detection;
use crate::schema::{BBox, LaneId, Movement, ObjectType, PedDirection};

pub use hungarian::hungarian;
pub use kalman::{
    bbox_to_measurement, state_to_bbox, KalmanConfig, KalmanError, KalmanFilter, KalmanState,
    MeasurementCovariance, MeasurementVector, StateCovariance, StateVector,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrackerError {
    #[error("frame {frame} is not after the previous frame {previous}")]
    OutOfOrder { frame: u64, previous: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub iou_gate: f64,
    pub max_age: u32,
    pub n_init: u32,
    pub kalman: KalmanConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { iou_gate: 0.3, max_age: 5, n_init: 3, kalman: KalmanConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Deleted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: KalmanState,
    pub status: TrackStatus,
    pub hits: u32,
    pub misses: u32,
    pub bbox_history: Vec<(u64, BBox)>,
    pub lane_history: Vec<(u64, LaneId)>,
    class_votes: BTreeMap<ObjectType, u32>,
    pub last_class: ObjectType,
    pub movement: Option<Movement>,
    pub ped_direction: Option<PedDirection>,
}

impl Track {
    /// Majority class over matched detections; non-descript only wins when
    /// nothing else was ever seen. Ties favour the latest class.
    pub fn class(&self) -> ObjectType {
        let described = self.class_votes.iter().filter(|(c, _)| **c != ObjectType::NonDescript);
        let best = described.max_by_key(|(c, n)| (**n, **c == self.last_class));
        best.map_or(ObjectType::NonDescript, |(c, _)| *c)
    }

    pub fn last_bbox(&self) -> Option<BBox> {
        self.bbox_history.last().map(|(_, b)| *b)
    }

    pub fn lanes(&self) -> Vec<LaneId> {
        self.lane_history.iter().map(|(_, l)| *l).collect()
    }
}

/// A track observed in the current frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub track_id: u64,
    pub bbox: BBox,
    pub status: TrackStatus,
    /// Index of the matched detection within the frame's input.
    pub detection: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Association {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Minimum-cost assignment on `1 - IoU`, then drops pairs below `iou_gate`.
pub fn associate(tracks: &[BBox], detections: &[BBox], iou_gate: f64) -> Association {
    let cost: Vec<Vec<f64>> = tracks
        .iter()
        .map(|t| detections.iter().map(|d| 1.0 - t.iou(d)).collect())
        .collect();
    let assignment = if detections.is_empty() { vec![None; tracks.len()] } else { hungarian(&cost) };
    let mut out = Association::default();
    let mut det_used = vec![false; detections.len()];
    for (ti, a) in assignment.into_iter().enumerate() {
        match a {
            Some(di) if 1.0 - cost[ti][di] >= iou_gate => {
                det_used[di] = true;
                out.matches.push((ti, di));
            }
            _ => out.unmatched_tracks.push(ti),
        }
    }
    out.unmatched_detections = (0..detections.len()).filter(|&d| !det_used[d]).collect();
    out
}

#[derive(Debug, Clone)]
pub struct Tracker {
    pub config: TrackerConfig,
    filter: KalmanFilter,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self {
            config,
            filter: KalmanFilter::new(config.kalman),
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
        }
    }

    /// Live tracks ordered by id.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn track(&self, id: u64) -> Option<&Track> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn track_mut(&mut self, id: u64) -> Option<&mut Track> {
        self.tracks.iter_mut().find(|t| t.id == id)
    }

    /// Advances every track by one frame and associates the frame's detections.
    ///
    /// Returns the tracks matched or created in this frame, ordered by id.
    pub fn step(
        &mut self,
        frame: u64,
        detections: &[Detection],
    ) -> Result<Vec<TrackOutput>, TrackerError> {
        if let Some(previous) = self.last_frame {
            if frame <= previous {
                return Err(TrackerError::OutOfOrder { frame, previous });
            }
        }
        self.last_frame = Some(frame);

        for track in &mut self.tracks {
            match self.filter.predict(&track.state) {
                Ok(s) => track.state = s,
                Err(_) => track.status = TrackStatus::Deleted,
            }
        }
        self.tracks.retain(|t| t.status != TrackStatus::Deleted);

        let predicted: Vec<BBox> = self.tracks.iter().map(|t| t.state.bbox()).collect();
        let boxes: Vec<BBox> = detections.iter().map(|d| d.bbox).collect();
        let assoc = associate(&predicted, &boxes, self.config.iou_gate);

        let mut outputs = Vec::new();
        for &(ti, di) in &assoc.matches {
            let track = &mut self.tracks[ti];
            let det = &detections[di];
            match self.filter.update(&track.state, &det.bbox) {
                Ok(s) => track.state = s,
                Err(_) => {
                    track.status = TrackStatus::Deleted;
                    continue;
                }
            }
            track.hits += 1;
            track.misses = 0;
            track.bbox_history.push((frame, det.bbox));
            *track.class_votes.entry(det.class).or_default() += 1;
            track.last_class = det.class;
            if track.status == TrackStatus::Tentative && track.hits >= self.config.n_init {
                track.status = TrackStatus::Confirmed;
            }
            outputs.push(TrackOutput { track_id: track.id, bbox: det.bbox, status: track.status, detection: di });
        }
        for &ti in &assoc.unmatched_tracks {
            let track = &mut self.tracks[ti];
            track.misses += 1;
            if track.misses > self.config.max_age {
                track.status = TrackStatus::Deleted;
            }
        }
        for &di in &assoc.unmatched_detections {
            let det = &detections[di];
            let id = self.next_id;
            self.next_id += 1;
            let status = if self.config.n_init <= 1 {
                TrackStatus::Confirmed
            } else {
                TrackStatus::Tentative
            };
            self.tracks.push(Track {
                id,
                state: self.filter.initiate(&det.bbox),
                status,
                hits: 1,
                misses: 0,
                bbox_history: vec![(frame, det.bbox)],
                lane_history: Vec::new(),
                class_votes: BTreeMap::from([(det.class, 1)]),
                last_class: det.class,
                movement: None,
                ped_direction: None,
            });
            outputs.push(TrackOutput { track_id: id, bbox: det.bbox, status, detection: di });
        }
        self.tracks.retain(|t| t.status != TrackStatus::Deleted);
        outputs.retain(|o| self.tracks.iter().any(|t| t.id == o.track_id));
        outputs.sort_by_key(|o| o.track_id);
        Ok(outputs)
    }

    pub fn dump(&self, frame: u64) -> TrackDump {
        TrackDump {
            frame,
            tracks: self
                .tracks
                .iter()
                .map(|t| TrackDumpEntry {
                    id: t.id,
                    status: t.status,
                    hits: t.hits,
                    misses: t.misses,
                    state_bbox: t.state.bbox(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrackDumpEntry {
    pub id: u64,
    pub status: TrackStatus,
    pub hits: u32,
    pub misses: u32,
    pub state_bbox: BBox,
}

/// Per-frame tracker state for the optional debug dump.
#[derive(Debug, Clone, Serialize)]
pub struct TrackDump {
    pub frame: u64,
    pub tracks: Vec<TrackDumpEntry>,
}
