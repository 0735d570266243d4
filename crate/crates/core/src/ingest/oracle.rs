//! Property backend contract and the ground-truth oracle sidecar that implements it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{
    BBox, Category, Direction, Height, Lighting, Occlusion, PedDirection, Pose, Property,
    PropertyValue, UnknownLabel,
};

use super::IngestError;

/// Minimum IoU for a detection to inherit an oracle object's labels.
pub const ORACLE_MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("property {property} is not defined for category {category}")]
    InvalidProperty { property: Property, category: Category },
    #[error(transparent)]
    BadLabel(#[from] UnknownLabel),
}

/// Supplies perception properties for a detected object.
///
/// `Ok(None)` means the backend has no opinion and the caller falls back to
/// its default.
pub trait PropertyBackend: Sync {
    fn label(
        &self,
        frame: u64,
        bbox: &BBox,
        category: Category,
        property: Property,
    ) -> Result<Option<PropertyValue>, BackendError>;
}

/// Backend that never answers; every property takes its default.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoBackend;

impl PropertyBackend for NoBackend {
    fn label(
        &self,
        _frame: u64,
        _bbox: &BBox,
        _category: Category,
        _property: Property,
    ) -> Result<Option<PropertyValue>, BackendError> {
        Ok(None)
    }
}

/// Most-frequent-class prior used when the backend has no label.
pub fn default_label(property: Property, category: Category) -> PropertyValue {
    match property {
        Property::Occlusion => PropertyValue::Occlusion(Occlusion::None),
        Property::BottomOcclusion
        | Property::HeadOcclusion
        | Property::FeetOcclusion
        | Property::StrangePose => PropertyValue::Flag(false),
        Property::Lighting => PropertyValue::Lighting(Lighting::Normal),
        Property::Pose => PropertyValue::Pose(Pose::Rear),
        Property::Height => PropertyValue::Height(Height::Adult),
        Property::Direction if category == Category::Pedestrian => {
            PropertyValue::PedDirection(PedDirection::SS)
        }
        Property::Direction => PropertyValue::Direction(Direction::Preceding),
    }
}

/// Backend label, or the default when the backend is silent.
pub fn query_property_backend(
    backend: &dyn PropertyBackend,
    frame: u64,
    bbox: &BBox,
    category: Category,
    property: Property,
) -> Result<PropertyValue, BackendError> {
    if !category.has_property(property) {
        return Err(BackendError::InvalidProperty { property, category });
    }
    Ok(backend
        .label(frame, bbox, category, property)?
        .unwrap_or_else(|| default_label(property, category)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleObjectWire {
    pub bbox: [f64; 4],
    pub labels: BTreeMap<String, LabelWire>,
}

/// Labels may be written as strings or, for the boolean properties, JSON booleans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelWire {
    Text(String),
    Flag(bool),
}

impl LabelWire {
    fn text(&self) -> &str {
        match self {
            LabelWire::Text(s) => s,
            LabelWire::Flag(true) => "true",
            LabelWire::Flag(false) => "false",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleFrameWire {
    pub index: u64,
    pub objects: Vec<OracleObjectWire>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleWire {
    pub frames: Vec<OracleFrameWire>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleObject {
    pub bbox: BBox,
    pub labels: BTreeMap<Property, String>,
}

/// Ground-truth property labels keyed by frame, matched to detections by IoU.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PropertyOracle {
    frames: BTreeMap<u64, Vec<OracleObject>>,
}

impl PropertyOracle {
    pub fn from_wire(wire: OracleWire) -> Result<Self, IngestError> {
        let mut frames: BTreeMap<u64, Vec<OracleObject>> = BTreeMap::new();
        for frame in wire.frames {
            let objects = frames.entry(frame.index).or_default();
            for obj in frame.objects {
                let mut labels = BTreeMap::new();
                for (name, value) in obj.labels {
                    let property: Property =
                        name.parse().map_err(|e: UnknownLabel| IngestError::Oracle(e.to_string()))?;
                    let text = value.text();
                    if !PropertyValue::is_label_of(property, text) {
                        return Err(IngestError::Oracle(format!(
                            "label {text:?} is not in the vocabulary of {property}"
                        )));
                    }
                    labels.insert(property, text.to_string());
                }
                objects.push(OracleObject { bbox: BBox::from_array(obj.bbox), labels });
            }
        }
        Ok(Self { frames })
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        let wire: OracleWire = super::from_json(path, &text)?;
        Self::from_wire(wire)
    }

    /// Object with the highest IoU (at least [`ORACLE_MATCH_IOU`]) in `frame`.
    pub fn lookup(&self, frame: u64, bbox: &BBox) -> Option<&OracleObject> {
        let mut best: Option<(&OracleObject, f64)> = None;
        for obj in self.frames.get(&frame)? {
            let iou = obj.bbox.iou(bbox);
            if iou >= ORACLE_MATCH_IOU && best.is_none_or(|(_, b)| iou > b) {
                best = Some((obj, iou));
            }
        }
        best.map(|(o, _)| o)
    }
}

impl PropertyBackend for PropertyOracle {
    fn label(
        &self,
        frame: u64,
        bbox: &BBox,
        category: Category,
        property: Property,
    ) -> Result<Option<PropertyValue>, BackendError> {
        let Some(obj) = self.lookup(frame, bbox) else {
            return Ok(None);
        };
        obj.labels
            .get(&property)
            .map(|text| PropertyValue::parse(property, category, text).map_err(Into::into))
            .transpose()
    }
}
