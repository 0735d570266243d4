//! Annotation data model and its canonical JSON form.
//!
//! Every property vocabulary used anywhere in the pipeline is declared here.
//! Ground truth and pipeline output share this one schema.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

pub const SCHEMA_VERSION: &str = "1.0";

/// Rounds a pixel coordinate to the two decimals kept by the JSON form.
pub fn round_coord(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Axis-aligned box in image coordinates (origin top-left, y down).
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BBox {
    pub minx: f64,
    pub miny: f64,
    pub maxx: f64,
    pub maxy: f64,
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("BBox", 4)?;
        s.serialize_field("maxx", &round_coord(self.maxx))?;
        s.serialize_field("maxy", &round_coord(self.maxy))?;
        s.serialize_field("minx", &round_coord(self.minx))?;
        s.serialize_field("miny", &round_coord(self.miny))?;
        s.end()
    }
}

impl BBox {
    pub const fn new(minx: f64, miny: f64, maxx: f64, maxy: f64) -> Self {
        Self { minx, miny, maxx, maxy }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn width(&self) -> f64 {
        self.maxx - self.minx
    }

    pub fn height(&self) -> f64 {
        self.maxy - self.miny
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.minx + self.maxx) / 2.0, (self.miny + self.maxy) / 2.0)
    }

    pub fn is_finite(&self) -> bool {
        [self.minx, self.miny, self.maxx, self.maxy].iter().all(|v| v.is_finite())
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = self.maxx.min(other.maxx) - self.minx.max(other.minx);
        let ih = self.maxy.min(other.maxy) - self.miny.max(other.miny);
        if iw <= 0.0 || ih <= 0.0 {
            return 0.0;
        }
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Clips to `[0, width] x [0, height]`; `None` when nothing with positive area remains.
    pub fn clip(&self, width: f64, height: f64) -> Option<BBox> {
        let b = BBox::new(
            self.minx.clamp(0.0, width),
            self.miny.clamp(0.0, height),
            self.maxx.clamp(0.0, width),
            self.maxy.clamp(0.0, height),
        );
        (b.maxx > b.minx && b.maxy > b.miny).then_some(b)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.minx + dx, self.miny + dy, self.maxx + dx, self.maxy + dy)
    }

    /// Snaps every coordinate to the 0.01 px grid used on the wire.
    pub fn quantized(&self) -> BBox {
        BBox::new(
            round_coord(self.minx),
            round_coord(self.miny),
            round_coord(self.maxx),
            round_coord(self.maxy),
        )
    }
}

/// Error for a label outside its vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {vocabulary} value {value:?}")]
pub struct UnknownLabel {
    pub vocabulary: &'static str,
    pub value: String,
}

macro_rules! vocabulary {
    ($(#[$meta:meta])* $name:ident : $vocab:literal { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = UnknownLabel;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(UnknownLabel { vocabulary: $vocab, value: s.to_string() }),
                }
            }
        }
    };
}

vocabulary! {
    ObjectType: "object_type" {
        Car => "car",
        Bus => "bus",
        Truck => "truck",
        OtherVehicle => "other-vehicle",
        Mopedist => "mopedist",
        Motorcyclist => "motorcyclist",
        Cyclist => "cyclist",
        OtherTwoWheeler => "other-two-wheeler",
        Pedestrian => "pedestrian",
        NonDescript => "non-descript",
    }
}

vocabulary! {
    Category: "category" {
        Vehicle => "vehicle",
        TwoWheeler => "two-wheeler",
        Pedestrian => "pedestrian",
        NonDescript => "non-descript",
    }
}

vocabulary! {
    /// Lane relative to the ego vehicle; negative ids are to the left.
    LaneId: "lane" {
        Unknown => "unknown",
        Neg2 => "-2",
        Neg1 => "-1",
        Ego => "0",
        Pos1 => "+1",
        Pos2 => "+2",
    }
}

vocabulary! {
    Occlusion: "occlusion" {
        None => "none",
        Partial => "partial",
        Full => "full",
    }
}

vocabulary! {
    /// Travel direction of a vehicle or two-wheeler relative to the ego vehicle.
    Direction: "direction" {
        Preceding => "preceding",
        Oncoming => "oncoming",
    }
}

vocabulary! {
    /// Image-plane compass heading of a pedestrian (north is up).
    PedDirection: "pedestrian direction" {
        NN => "NN",
        NE => "NE",
        NW => "NW",
        SS => "SS",
        SE => "SE",
        SW => "SW",
        EE => "EE",
        WW => "WW",
    }
}

vocabulary! {
    Movement: "movement" {
        Moving => "moving",
        Stationary => "stationary",
        Parked => "parked",
    }
}

vocabulary! {
    Rotation: "rotation" {
        Relevant => "relevant",
        Irrelevant => "irrelevant",
    }
}

vocabulary! {
    Pose: "pose" {
        Rear => "rear",
        RearRight => "rearright",
        RearLeft => "rearleft",
        Front => "front",
        FrontRight => "frontright",
        FrontLeft => "frontleft",
        Side => "side",
    }
}

vocabulary! {
    Lighting: "lighting" {
        Normal => "normal",
        Unsharp => "unsharp",
        Glare => "glare",
    }
}

vocabulary! {
    Height: "height" {
        Adult => "adult",
        Child => "child",
    }
}

vocabulary! {
    /// Properties supplied by the perception backend rather than derived by rules.
    Property: "property" {
        Occlusion => "occlusion",
        BottomOcclusion => "bottom_occlusion",
        HeadOcclusion => "head_occlusion",
        FeetOcclusion => "feet_occlusion",
        Direction => "direction",
        Pose => "pose",
        Lighting => "lighting",
        Height => "height",
        StrangePose => "strange_pose",
    }
}

impl ObjectType {
    pub fn category(self) -> Category {
        match self {
            ObjectType::Car | ObjectType::Bus | ObjectType::Truck | ObjectType::OtherVehicle => {
                Category::Vehicle
            }
            ObjectType::Mopedist
            | ObjectType::Motorcyclist
            | ObjectType::Cyclist
            | ObjectType::OtherTwoWheeler => Category::TwoWheeler,
            ObjectType::Pedestrian => Category::Pedestrian,
            ObjectType::NonDescript => Category::NonDescript,
        }
    }

    /// The nine detector classes (everything except non-descript).
    pub fn detector_classes() -> &'static [ObjectType] {
        &ObjectType::ALL[..9]
    }
}

impl Category {
    /// Backend-supplied properties that records of this category carry.
    pub fn properties(self) -> &'static [Property] {
        use Property::*;
        match self {
            Category::Vehicle => &[Occlusion, BottomOcclusion, Direction, Pose, Lighting],
            Category::TwoWheeler => {
                &[Occlusion, HeadOcclusion, FeetOcclusion, Direction, Pose, Lighting]
            }
            Category::Pedestrian => &[
                Occlusion,
                HeadOcclusion,
                FeetOcclusion,
                Direction,
                Height,
                StrangePose,
                Lighting,
            ],
            Category::NonDescript => &[],
        }
    }

    pub fn has_property(self, p: Property) -> bool {
        self.properties().contains(&p)
    }
}

impl LaneId {
    /// Maps a signed offset from the ego lane; anything beyond two lanes is unknown.
    pub fn from_offset(offset: i64) -> LaneId {
        match offset {
            -2 => LaneId::Neg2,
            -1 => LaneId::Neg1,
            0 => LaneId::Ego,
            1 => LaneId::Pos1,
            2 => LaneId::Pos2,
            _ => LaneId::Unknown,
        }
    }

    pub fn offset(self) -> Option<i64> {
        match self {
            LaneId::Unknown => None,
            LaneId::Neg2 => Some(-2),
            LaneId::Neg1 => Some(-1),
            LaneId::Ego => Some(0),
            LaneId::Pos1 => Some(1),
            LaneId::Pos2 => Some(2),
        }
    }

    pub fn is_numbered(self) -> bool {
        self != LaneId::Unknown
    }
}

/// A typed property label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropertyValue {
    Occlusion(Occlusion),
    Flag(bool),
    Direction(Direction),
    PedDirection(PedDirection),
    Pose(Pose),
    Lighting(Lighting),
    Height(Height),
}

impl PropertyValue {
    /// Parses `text` in the vocabulary of `property` for the given category.
    pub fn parse(property: Property, category: Category, text: &str) -> Result<Self, UnknownLabel> {
        let flag = |text: &str| match text {
            "true" => Ok(PropertyValue::Flag(true)),
            "false" => Ok(PropertyValue::Flag(false)),
            _ => Err(UnknownLabel { vocabulary: "boolean", value: text.to_string() }),
        };
        Ok(match property {
            Property::Occlusion => PropertyValue::Occlusion(text.parse()?),
            Property::BottomOcclusion
            | Property::HeadOcclusion
            | Property::FeetOcclusion
            | Property::StrangePose => flag(text)?,
            Property::Direction if category == Category::Pedestrian => {
                PropertyValue::PedDirection(text.parse()?)
            }
            Property::Direction => PropertyValue::Direction(text.parse()?),
            Property::Pose => PropertyValue::Pose(text.parse()?),
            Property::Lighting => PropertyValue::Lighting(text.parse()?),
            Property::Height => PropertyValue::Height(text.parse()?),
        })
    }

    /// True when `text` is a label of `property` for some category.
    pub fn is_label_of(property: Property, text: &str) -> bool {
        [Category::Vehicle, Category::Pedestrian]
            .iter()
            .any(|&c| PropertyValue::parse(property, c, text).is_ok())
    }

    pub fn label(&self) -> &'static str {
        match self {
            PropertyValue::Occlusion(v) => v.as_str(),
            PropertyValue::Flag(true) => "true",
            PropertyValue::Flag(false) => "false",
            PropertyValue::Direction(v) => v.as_str(),
            PropertyValue::PedDirection(v) => v.as_str(),
            PropertyValue::Pose(v) => v.as_str(),
            PropertyValue::Lighting(v) => v.as_str(),
            PropertyValue::Height(v) => v.as_str(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleProps {
    pub occlusion: Occlusion,
    pub bottom_occlusion: bool,
    pub direction: Direction,
    pub movement: Movement,
    pub lane: LaneId,
    pub lane_change: bool,
    pub rotation: Rotation,
    pub pose: Pose,
    pub lighting: Lighting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoWheelerProps {
    pub occlusion: Occlusion,
    pub head_occlusion: bool,
    pub feet_occlusion: bool,
    pub direction: Direction,
    pub movement: Movement,
    pub lane: LaneId,
    pub rotation: Rotation,
    pub pose: Pose,
    pub lighting: Lighting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PedestrianProps {
    pub occlusion: Occlusion,
    pub head_occlusion: bool,
    pub feet_occlusion: bool,
    pub direction: PedDirection,
    pub movement: Movement,
    pub height: Height,
    pub strange_pose: bool,
    pub lighting: Lighting,
}

/// Category-specific properties, tagged on the wire by category name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Props {
    Vehicle(VehicleProps),
    TwoWheeler(TwoWheelerProps),
    Pedestrian(PedestrianProps),
}

impl Props {
    pub fn category(&self) -> Category {
        match self {
            Props::Vehicle(_) => Category::Vehicle,
            Props::TwoWheeler(_) => Category::TwoWheeler,
            Props::Pedestrian(_) => Category::Pedestrian,
        }
    }

    pub fn movement(&self) -> Movement {
        match self {
            Props::Vehicle(p) => p.movement,
            Props::TwoWheeler(p) => p.movement,
            Props::Pedestrian(p) => p.movement,
        }
    }

    /// Lane assignment; pedestrians carry none.
    pub fn lane(&self) -> Option<LaneId> {
        match self {
            Props::Vehicle(p) => Some(p.lane),
            Props::TwoWheeler(p) => Some(p.lane),
            Props::Pedestrian(_) => None,
        }
    }

    pub fn lane_change(&self) -> Option<bool> {
        match self {
            Props::Vehicle(p) => Some(p.lane_change),
            _ => None,
        }
    }

    /// Label of a backend-supplied property, if this variant carries it.
    pub fn property(&self, property: Property) -> Option<PropertyValue> {
        use PropertyValue as V;
        match (self, property) {
            (Props::Vehicle(p), Property::Occlusion) => Some(V::Occlusion(p.occlusion)),
            (Props::Vehicle(p), Property::BottomOcclusion) => Some(V::Flag(p.bottom_occlusion)),
            (Props::Vehicle(p), Property::Direction) => Some(V::Direction(p.direction)),
            (Props::Vehicle(p), Property::Pose) => Some(V::Pose(p.pose)),
            (Props::Vehicle(p), Property::Lighting) => Some(V::Lighting(p.lighting)),
            (Props::TwoWheeler(p), Property::Occlusion) => Some(V::Occlusion(p.occlusion)),
            (Props::TwoWheeler(p), Property::HeadOcclusion) => Some(V::Flag(p.head_occlusion)),
            (Props::TwoWheeler(p), Property::FeetOcclusion) => Some(V::Flag(p.feet_occlusion)),
            (Props::TwoWheeler(p), Property::Direction) => Some(V::Direction(p.direction)),
            (Props::TwoWheeler(p), Property::Pose) => Some(V::Pose(p.pose)),
            (Props::TwoWheeler(p), Property::Lighting) => Some(V::Lighting(p.lighting)),
            (Props::Pedestrian(p), Property::Occlusion) => Some(V::Occlusion(p.occlusion)),
            (Props::Pedestrian(p), Property::HeadOcclusion) => Some(V::Flag(p.head_occlusion)),
            (Props::Pedestrian(p), Property::FeetOcclusion) => Some(V::Flag(p.feet_occlusion)),
            (Props::Pedestrian(p), Property::Direction) => Some(V::PedDirection(p.direction)),
            (Props::Pedestrian(p), Property::Height) => Some(V::Height(p.height)),
            (Props::Pedestrian(p), Property::StrangePose) => Some(V::Flag(p.strange_pose)),
            (Props::Pedestrian(p), Property::Lighting) => Some(V::Lighting(p.lighting)),
            _ => None,
        }
    }
}

/// One object in one frame. `size` is the object's bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub frame_index: u64,
    pub track_id: u64,
    pub object_type: ObjectType,
    pub size: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub props: Option<Props>,
}

impl AnnotationRecord {
    pub fn non_descript(frame_index: u64, track_id: u64, size: BBox) -> Self {
        Self { frame_index, track_id, object_type: ObjectType::NonDescript, size, props: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecords {
    pub index: u64,
    pub records: Vec<AnnotationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationDocument {
    pub schema_version: String,
    pub sequence_id: String,
    pub frames: Vec<FrameRecords>,
}

impl AnnotationDocument {
    pub fn new(sequence_id: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            sequence_id: sequence_id.into(),
            frames: Vec::new(),
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.frames.iter().flat_map(|f| f.records.iter())
    }

    pub fn frame(&self, index: u64) -> Option<&FrameRecords> {
        self.frames
            .binary_search_by_key(&index, |f| f.index)
            .ok()
            .map(|i| &self.frames[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("non-finite coordinate")]
    NonFiniteCoordinate,
    #[error("negative coordinate")]
    NegativeCoordinate,
    #[error("degenerate bbox")]
    DegenerateBBox,
    #[error("props variant mismatch")]
    PropsMismatch,
    #[error("missing props")]
    MissingProps,
    #[error("non-descript record carries props")]
    UnexpectedProps,
    #[error("frame index not strictly increasing")]
    FrameOrder,
    #[error("record frame_index differs from its frame")]
    FrameIndexMismatch,
    #[error("duplicate track_id within frame")]
    DuplicateTrack,
}

/// A violation located by its JSON path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocatedViolation {
    pub path: String,
    pub violation: Violation,
}

impl fmt::Display for LocatedViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.violation)
    }
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("malformed JSON: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("unsupported schema_version {0:?}")]
    UnsupportedVersion(String),
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("invalid document: {}", join_violations(.0))]
    Invalid(Vec<LocatedViolation>),
}

fn join_violations(v: &[LocatedViolation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

pub fn validate_record(record: &AnnotationRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    let b = &record.size;
    if !b.is_finite() {
        out.push(Violation::NonFiniteCoordinate);
    } else {
        if b.minx < 0.0 || b.miny < 0.0 || b.maxx < 0.0 || b.maxy < 0.0 {
            out.push(Violation::NegativeCoordinate);
        }
        if b.minx >= b.maxx || b.miny >= b.maxy {
            out.push(Violation::DegenerateBBox);
        }
    }
    let category = record.object_type.category();
    match (&record.props, category) {
        (None, Category::NonDescript) => {}
        (Some(_), Category::NonDescript) => out.push(Violation::UnexpectedProps),
        (None, _) => out.push(Violation::MissingProps),
        (Some(p), c) if p.category() != c => out.push(Violation::PropsMismatch),
        _ => {}
    }
    out
}

pub fn validate_document(doc: &AnnotationDocument) -> Vec<LocatedViolation> {
    let mut out = Vec::new();
    let mut previous: Option<u64> = None;
    for (fi, frame) in doc.frames.iter().enumerate() {
        if previous.is_some_and(|p| frame.index <= p) {
            out.push(LocatedViolation {
                path: format!("frames[{fi}].index"),
                violation: Violation::FrameOrder,
            });
        }
        previous = Some(frame.index);
        let mut seen = BTreeSet::new();
        for (ri, record) in frame.records.iter().enumerate() {
            let path = format!("frames[{fi}].records[{ri}]");
            if record.frame_index != frame.index {
                out.push(LocatedViolation {
                    path: format!("{path}.frame_index"),
                    violation: Violation::FrameIndexMismatch,
                });
            }
            if !seen.insert(record.track_id) {
                out.push(LocatedViolation {
                    path: format!("{path}.track_id"),
                    violation: Violation::DuplicateTrack,
                });
            }
            out.extend(
                validate_record(record)
                    .into_iter()
                    .map(|violation| LocatedViolation { path: path.clone(), violation }),
            );
        }
    }
    out
}

/// Canonical JSON: sorted keys, no whitespace, coordinates at two decimals.
pub fn serialize(doc: &AnnotationDocument) -> Result<String, SchemaError> {
    let violations = validate_document(doc);
    if !violations.is_empty() {
        return Err(SchemaError::Invalid(violations));
    }
    // Value maps are ordered, which is what sorts the keys.
    let value = serde_json::to_value(doc)?;
    Ok(serde_json::to_string(&value)?)
}

pub fn parse(text: &str) -> Result<AnnotationDocument, SchemaError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if let Some(version) = value.get("schema_version").and_then(|v| v.as_str()) {
        if version != SCHEMA_VERSION {
            return Err(SchemaError::UnsupportedVersion(version.to_string()));
        }
    }
    let doc: AnnotationDocument =
        serde_path_to_error::deserialize(value).map_err(|e| SchemaError::Field {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    let violations = validate_document(&doc);
    if !violations.is_empty() {
        return Err(SchemaError::Invalid(violations));
    }
    Ok(doc)
}
