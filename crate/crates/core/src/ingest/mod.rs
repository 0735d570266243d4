//! Input loading: detection manifests, PGM frames and lane masks, the property
//! oracle, and the detection post-processing rules.

mod oracle;
mod pgm;

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{BBox, Category, Direction, ObjectType, UnknownLabel};

pub use oracle::{
    default_label, query_property_backend, BackendError, LabelWire, NoBackend, OracleFrameWire,
    OracleObject, OracleObjectWire, OracleWire, PropertyBackend, PropertyOracle,
    ORACLE_MATCH_IOU,
};
pub use pgm::{decode_pgm, encode_pgm, load_pgm, write_pgm, GrayImage, PgmError};

/// Boxes strictly smaller than this in both dimensions become non-descript.
pub const NONDESCRIPT_PX: f64 = 30.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{file}: {path}: {message}")]
    Json { file: String, path: String, message: String },
    #[error("non-monotonic frames: index {index} follows {previous}")]
    NonMonotonicFrames { index: u64, previous: u64 },
    #[error("unknown detection class {0:?}")]
    UnknownClass(String),
    #[error("detection score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("{path}: {source}")]
    Pgm { path: String, source: PgmError },
    #[error("oracle: {0}")]
    Oracle(String),
}

impl IngestError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io { path: path.display().to_string(), source }
    }
}

pub(crate) fn from_json<T: DeserializeOwned>(file: &Path, text: &str) -> Result<T, IngestError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| IngestError::Json {
        file: file.display().to_string(),
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// One detector output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class: ObjectType,
    pub score: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub index: u64,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionManifest {
    pub sequence_id: String,
    pub image_width: u32,
    pub image_height: u32,
    pub frames: Vec<FrameDetections>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionWire {
    pub class: String,
    pub score: f64,
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameWire {
    pub index: u64,
    pub detections: Vec<DetectionWire>,
}

/// Detection manifest as it appears on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestWire {
    pub sequence_id: String,
    pub image_width: u32,
    pub image_height: u32,
    pub frames: Vec<FrameWire>,
}

impl DetectionManifest {
    /// Validates ordering and classes, clips boxes to the image and drops
    /// detections left with no area.
    pub fn from_wire(wire: ManifestWire) -> Result<Self, IngestError> {
        let (w, h) = (wire.image_width as f64, wire.image_height as f64);
        let mut frames = Vec::with_capacity(wire.frames.len());
        let mut previous: Option<u64> = None;
        for frame in wire.frames {
            if let Some(p) = previous {
                if frame.index <= p {
                    return Err(IngestError::NonMonotonicFrames { index: frame.index, previous: p });
                }
            }
            previous = Some(frame.index);
            let mut detections = Vec::with_capacity(frame.detections.len());
            for d in frame.detections {
                let class: ObjectType = d
                    .class
                    .parse()
                    .map_err(|e: UnknownLabel| IngestError::UnknownClass(e.value))?;
                if class == ObjectType::NonDescript {
                    return Err(IngestError::UnknownClass(d.class));
                }
                if !(0.0..=1.0).contains(&d.score) {
                    return Err(IngestError::ScoreOutOfRange(d.score));
                }
                if let Some(bbox) = BBox::from_array(d.bbox).clip(w, h) {
                    detections.push(Detection { class, score: d.score, bbox });
                }
            }
            frames.push(FrameDetections { index: frame.index, detections });
        }
        Ok(Self {
            sequence_id: wire.sequence_id,
            image_width: wire.image_width,
            image_height: wire.image_height,
            frames,
        })
    }
}

pub fn load_detection_manifest(path: &Path) -> Result<DetectionManifest, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    DetectionManifest::from_wire(from_json(path, &text)?)
}

pub fn frame_path(dir: &Path, index: u64) -> PathBuf {
    dir.join(format!("frame_{index:06}.pgm"))
}

pub fn lane_mask_path(dir: &Path, index: u64) -> PathBuf {
    dir.join(format!("lane_{index:06}.pgm"))
}

pub fn load_image(path: &Path) -> Result<GrayImage, IngestError> {
    load_pgm(path).map_err(|source| IngestError::Pgm { path: path.display().to_string(), source })
}

/// Per-sequence scene geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub median_present: bool,
    pub image_width: u32,
    pub image_height: u32,
    /// Pixel column of the ego vehicle's center at the bottom row.
    pub ego_anchor_x: f64,
}

impl SceneConfig {
    pub fn new(image_width: u32, image_height: u32) -> Self {
        Self {
            median_present: false,
            image_width,
            image_height,
            ego_anchor_x: image_width as f64 / 2.0,
        }
    }
}

/// Applies the non-descript rules with the default 30 px size threshold.
pub fn postprocess_detection(
    d: &Detection,
    cfg: &SceneConfig,
    direction_hint: Option<Direction>,
) -> Detection {
    postprocess_detection_with(d, cfg, direction_hint, NONDESCRIPT_PX)
}

/// Rewrites the class to non-descript when the box is smaller than
/// `nondescript_px` in both dimensions, or when an oncoming vehicle or
/// two-wheeler sits beyond a median. The box is never changed.
pub fn postprocess_detection_with(
    d: &Detection,
    cfg: &SceneConfig,
    direction_hint: Option<Direction>,
    nondescript_px: f64,
) -> Detection {
    let small = d.bbox.width() < nondescript_px && d.bbox.height() < nondescript_px;
    let beyond_median = cfg.median_present
        && direction_hint == Some(Direction::Oncoming)
        && matches!(d.class.category(), Category::Vehicle | Category::TwoWheeler);
    if small || beyond_median {
        Detection { class: ObjectType::NonDescript, ..*d }
    } else {
        *d
    }
}
