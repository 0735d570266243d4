//! Rule-derived properties and assembly of validated annotation records.

use thiserror::Error;

use crate::ingest::{query_property_backend, BackendError, PropertyBackend};
use crate::schema::{
    validate_record, AnnotationRecord, BBox, Category, Direction, Height, LaneId, Lighting,
    Movement, ObjectType, Occlusion, PedDirection, PedestrianProps, Pose, Property, PropertyValue,
    Props, Rotation, TwoWheelerProps, VehicleProps, Violation,
};

/// Observations used for the pedestrian heading.
pub const HEADING_WINDOW: usize = 5;
/// Shorter displacements keep the previous heading.
pub const MIN_HEADING_PX: f64 = 2.0;
/// Observations used by the oncoming heuristic.
pub const GROWTH_WINDOW: usize = 5;
/// Per-frame area growth above which a vehicle counts as oncoming.
pub const ONCOMING_GROWTH_RATE: f64 = 0.20;

#[derive(Debug, Error)]
pub enum PropertyError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("backend returned {label:?} for property {property}")]
    WrongKind { property: Property, label: PropertyValue },
    #[error("assembled record for track {track_id} in frame {frame} is invalid: {violations:?}")]
    InvalidRecord { frame: u64, track_id: u64, violations: Vec<Violation> },
}

/// Rotation is only meaningful when a travel direction is known.
pub fn derive_rotation(direction: Option<Direction>) -> Rotation {
    match direction {
        Some(Direction::Oncoming | Direction::Preceding) => Rotation::Relevant,
        None => Rotation::Irrelevant,
    }
}

/// Counterclockwise sector order starting at east.
const SECTORS: [PedDirection; 8] = [
    PedDirection::EE,
    PedDirection::NE,
    PedDirection::NN,
    PedDirection::NW,
    PedDirection::WW,
    PedDirection::SW,
    PedDirection::SS,
    PedDirection::SE,
];

/// Compass sector of a heading in degrees, counterclockwise from east.
/// A heading on a sector boundary belongs to the counterclockwise sector.
pub fn heading_sector(degrees: f64) -> PedDirection {
    let phi = degrees.rem_euclid(360.0);
    SECTORS[(((phi + 22.5) / 45.0).floor() as usize) % 8]
}

/// Compass sector of an image-plane displacement (y grows downward).
pub fn displacement_sector(dx: f64, dy: f64) -> PedDirection {
    heading_sector((-dy).atan2(dx).to_degrees())
}

/// Heading of the displacement over the last few box centres, or the
/// previous heading (south by default) when the walker barely moved.
pub fn derive_pedestrian_direction(
    history: &[BBox],
    previous: Option<PedDirection>,
) -> PedDirection {
    let fallback = previous.unwrap_or(PedDirection::SS);
    let window = &history[history.len().saturating_sub(HEADING_WINDOW)..];
    let (Some(first), Some(last)) = (window.first(), window.last()) else {
        return fallback;
    };
    let ((x0, y0), (x1, y1)) = (first.center(), last.center());
    let (dx, dy) = (x1 - x0, y1 - y0);
    if dx.hypot(dy) < MIN_HEADING_PX {
        return fallback;
    }
    displacement_sector(dx, dy)
}

/// Oncoming when the box grows faster than 20% per frame while its bottom
/// edge moves down the image; preceding otherwise.
pub fn derive_vehicle_direction_heuristic(history: &[BBox]) -> Direction {
    let window = &history[history.len().saturating_sub(GROWTH_WINDOW)..];
    if window.len() < 2 {
        return Direction::Preceding;
    }
    let (first, last) = (window[0], window[window.len() - 1]);
    if first.area() <= 0.0 {
        return Direction::Preceding;
    }
    let steps = (window.len() - 1) as f64;
    let rate = (last.area() / first.area()).powf(1.0 / steps) - 1.0;
    if rate > ONCOMING_GROWTH_RATE && last.maxy > first.maxy {
        Direction::Oncoming
    } else {
        Direction::Preceding
    }
}

/// Everything known about one tracked object in the current frame.
#[derive(Clone, Copy)]
pub struct RuleContext<'a> {
    pub frame: u64,
    pub track_id: u64,
    pub object_type: ObjectType,
    /// Box observations up to and including the current frame.
    pub bbox_history: &'a [BBox],
    pub lane: LaneId,
    pub movement: Movement,
    pub lane_change: bool,
    /// Heading assigned in the previous frame, for pedestrians.
    pub previous_heading: Option<PedDirection>,
    pub backend: &'a dyn PropertyBackend,
}

impl RuleContext<'_> {
    fn bbox(&self) -> BBox {
        *self.bbox_history.last().expect("rule context needs at least one observation")
    }

    fn query(&self, property: Property) -> Result<PropertyValue, BackendError> {
        let category = self.object_type.category();
        query_property_backend(self.backend, self.frame, &self.bbox(), category, property)
    }

    fn raw(&self, property: Property) -> Result<Option<PropertyValue>, BackendError> {
        let category = self.object_type.category();
        self.backend.label(self.frame, &self.bbox(), category, property)
    }
}

macro_rules! typed {
    ($ctx:expr, $prop:expr, $variant:ident) => {
        match $ctx.query($prop)? {
            PropertyValue::$variant(v) => v,
            label => return Err(PropertyError::WrongKind { property: $prop, label }),
        }
    };
}

fn occlusion(ctx: &RuleContext) -> Result<Occlusion, PropertyError> {
    Ok(typed!(ctx, Property::Occlusion, Occlusion))
}

fn flag(ctx: &RuleContext, p: Property) -> Result<bool, PropertyError> {
    Ok(typed!(ctx, p, Flag))
}

fn pose(ctx: &RuleContext) -> Result<Pose, PropertyError> {
    Ok(typed!(ctx, Property::Pose, Pose))
}

fn lighting(ctx: &RuleContext) -> Result<Lighting, PropertyError> {
    Ok(typed!(ctx, Property::Lighting, Lighting))
}

fn height(ctx: &RuleContext) -> Result<Height, PropertyError> {
    Ok(typed!(ctx, Property::Height, Height))
}

/// Oracle direction, else the growth heuristic.
pub fn vehicle_direction(ctx: &RuleContext) -> Result<Direction, PropertyError> {
    match ctx.raw(Property::Direction)? {
        Some(PropertyValue::Direction(d)) => Ok(d),
        Some(label) => Err(PropertyError::WrongKind { property: Property::Direction, label }),
        None => Ok(derive_vehicle_direction_heuristic(ctx.bbox_history)),
    }
}

/// Oracle heading, else the heading of the track's recent motion.
pub fn pedestrian_direction(ctx: &RuleContext) -> Result<PedDirection, PropertyError> {
    match ctx.raw(Property::Direction)? {
        Some(PropertyValue::PedDirection(d)) => Ok(d),
        Some(label) => Err(PropertyError::WrongKind { property: Property::Direction, label }),
        None => Ok(derive_pedestrian_direction(ctx.bbox_history, ctx.previous_heading)),
    }
}

/// Builds the full record for one object and checks it against the schema.
pub fn assemble_record(ctx: &RuleContext) -> Result<AnnotationRecord, PropertyError> {
    let size = ctx.bbox();
    let props = match ctx.object_type.category() {
        Category::NonDescript => None,
        Category::Vehicle => {
            let direction = vehicle_direction(ctx)?;
            Some(Props::Vehicle(VehicleProps {
                occlusion: occlusion(ctx)?,
                bottom_occlusion: flag(ctx, Property::BottomOcclusion)?,
                direction,
                movement: ctx.movement,
                lane: ctx.lane,
                lane_change: ctx.lane_change,
                rotation: derive_rotation(Some(direction)),
                pose: pose(ctx)?,
                lighting: lighting(ctx)?,
            }))
        }
        Category::TwoWheeler => {
            let direction = vehicle_direction(ctx)?;
            Some(Props::TwoWheeler(TwoWheelerProps {
                occlusion: occlusion(ctx)?,
                head_occlusion: flag(ctx, Property::HeadOcclusion)?,
                feet_occlusion: flag(ctx, Property::FeetOcclusion)?,
                direction,
                movement: ctx.movement,
                lane: ctx.lane,
                rotation: derive_rotation(Some(direction)),
                pose: pose(ctx)?,
                lighting: lighting(ctx)?,
            }))
        }
        Category::Pedestrian => Some(Props::Pedestrian(PedestrianProps {
            occlusion: occlusion(ctx)?,
            head_occlusion: flag(ctx, Property::HeadOcclusion)?,
            feet_occlusion: flag(ctx, Property::FeetOcclusion)?,
            direction: pedestrian_direction(ctx)?,
            movement: ctx.movement,
            height: height(ctx)?,
            strange_pose: flag(ctx, Property::StrangePose)?,
            lighting: lighting(ctx)?,
        })),
    };
    let record = AnnotationRecord {
        frame_index: ctx.frame,
        track_id: ctx.track_id,
        object_type: ctx.object_type,
        size,
        props,
    };
    let violations = validate_record(&record);
    if !violations.is_empty() {
        return Err(PropertyError::InvalidRecord {
            frame: ctx.frame,
            track_id: ctx.track_id,
            violations,
        });
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::NoBackend;
    use std::collections::BTreeMap;

    /// Backend answering from a fixed table.
    struct Table(BTreeMap<Property, PropertyValue>);

    impl PropertyBackend for Table {
        fn label(
            &self,
            _frame: u64,
            _bbox: &BBox,
            _category: Category,
            property: Property,
        ) -> Result<Option<PropertyValue>, BackendError> {
            Ok(self.0.get(&property).copied())
        }
    }

    fn ctx<'a>(
        object_type: ObjectType,
        history: &'a [BBox],
        backend: &'a dyn PropertyBackend,
    ) -> RuleContext<'a> {
        RuleContext {
            frame: 3,
            track_id: 7,
            object_type,
            bbox_history: history,
            lane: LaneId::Ego,
            movement: Movement::Moving,
            lane_change: false,
            previous_heading: None,
            backend,
        }
    }

    #[test]
    fn rotation_follows_direction() {
        assert_eq!(derive_rotation(Some(Direction::Oncoming)), Rotation::Relevant);
        assert_eq!(derive_rotation(Some(Direction::Preceding)), Rotation::Relevant);
        assert_eq!(derive_rotation(None), Rotation::Irrelevant);
    }

    fn walk(dx: f64, dy: f64) -> Vec<BBox> {
        let b = BBox::new(100.0, 100.0, 120.0, 150.0);
        vec![b, b.translate(dx, dy)]
    }

    #[test]
    fn pedestrian_compass_points() {
        assert_eq!(derive_pedestrian_direction(&walk(0.0, -10.0), None), PedDirection::NN);
        assert_eq!(derive_pedestrian_direction(&walk(10.0, 0.0), None), PedDirection::EE);
        assert_eq!(derive_pedestrian_direction(&walk(-7.0, -7.0), None), PedDirection::NW);
        assert_eq!(derive_pedestrian_direction(&walk(-9.0, 0.0), None), PedDirection::WW);
        assert_eq!(derive_pedestrian_direction(&walk(5.0, 5.0), None), PedDirection::SE);
    }

    #[test]
    fn short_displacement_keeps_previous_heading() {
        assert_eq!(derive_pedestrian_direction(&walk(1.0, 1.0), None), PedDirection::SS);
        assert_eq!(
            derive_pedestrian_direction(&walk(1.0, 1.0), Some(PedDirection::WW)),
            PedDirection::WW
        );
        assert_eq!(derive_pedestrian_direction(&walk(2.0, 0.0), None), PedDirection::EE);
    }

    #[test]
    fn heading_uses_last_five_centres() {
        let b = BBox::new(0.0, 100.0, 20.0, 150.0);
        // walks east for a long time, then north for the last four steps
        let mut h: Vec<BBox> = (0..10).map(|i| b.translate(10.0 * i as f64, 0.0)).collect();
        let last = *h.last().unwrap();
        h.extend((1..=4).map(|i| last.translate(0.0, -10.0 * i as f64)));
        assert_eq!(derive_pedestrian_direction(&h, None), PedDirection::NN);
    }

    #[test]
    fn sector_boundaries_go_counterclockwise() {
        assert_eq!(heading_sector(22.5), PedDirection::NE);
        assert_eq!(heading_sector(22.499), PedDirection::EE);
        assert_eq!(heading_sector(337.5), PedDirection::EE);
        assert_eq!(heading_sector(337.499), PedDirection::SE);
        assert_eq!(heading_sector(-1.0), PedDirection::EE);
        assert_eq!(heading_sector(180.0), PedDirection::WW);
        assert_eq!(heading_sector(270.0), PedDirection::SS);
    }

    #[test]
    fn vehicle_heuristic_branches() {
        let b = BBox::new(100.0, 100.0, 140.0, 130.0);
        assert_eq!(derive_vehicle_direction_heuristic(&[b, b, b]), Direction::Preceding);
        assert_eq!(derive_vehicle_direction_heuristic(&[b]), Direction::Preceding);
        // area doubles every frame, bottom edge descends
        let grow: Vec<BBox> = (0..5)
            .map(|i| {
                let s = 2f64.powf(i as f64 / 2.0);
                BBox::from_center(120.0, 115.0 + 5.0 * i as f64, 40.0 * s, 30.0 * s)
            })
            .collect();
        assert_eq!(derive_vehicle_direction_heuristic(&grow), Direction::Oncoming);
        // same growth with the bottom edge rising is not oncoming
        let rising: Vec<BBox> = (0..5)
            .map(|i| {
                let s = 2f64.powf(i as f64 / 2.0);
                BBox::from_center(120.0, 300.0 - 40.0 * i as f64, 40.0 * s, 30.0 * s)
            })
            .collect();
        assert_eq!(derive_vehicle_direction_heuristic(&rising), Direction::Preceding);
    }

    #[test]
    fn growth_rate_threshold_is_strict() {
        // 4 steps at exactly 20% per frame
        let base = BBox::new(0.0, 0.0, 100.0, 100.0);
        let h: Vec<BBox> = (0..5)
            .map(|i| {
                let side = 100.0 * 1.2f64.powf(i as f64 / 2.0);
                BBox::new(0.0, 0.0, side, side).translate(0.0, i as f64)
            })
            .collect();
        assert!(h[0] == base);
        let rate = (h[4].area() / h[0].area()).powf(0.25) - 1.0;
        assert!((rate - 0.2).abs() < 1e-9);
        let d = derive_vehicle_direction_heuristic(&h);
        assert_eq!(d == Direction::Oncoming, rate > ONCOMING_GROWTH_RATE);
    }

    #[test]
    fn preceding_car_with_defaults() {
        let h = [BBox::new(200.0, 200.0, 280.0, 260.0); 3];
        let r = assemble_record(&ctx(ObjectType::Car, &h, &NoBackend)).unwrap();
        let Some(Props::Vehicle(v)) = r.props else { panic!("{r:?}") };
        assert_eq!(v.occlusion, Occlusion::None);
        assert!(!v.bottom_occlusion);
        assert_eq!(v.direction, Direction::Preceding);
        assert_eq!(v.rotation, Rotation::Relevant);
        assert_eq!(v.pose, Pose::Rear);
        assert_eq!(v.lighting, Lighting::Normal);
        assert_eq!((r.frame_index, r.track_id, r.size), (3, 7, h[2]));
    }

    #[test]
    fn pedestrian_walking_west_with_feet_occluded() {
        let table = Table(BTreeMap::from([(Property::FeetOcclusion, PropertyValue::Flag(true))]));
        let h = walk(-12.0, 0.0);
        let r = assemble_record(&ctx(ObjectType::Pedestrian, &h, &table)).unwrap();
        let Some(Props::Pedestrian(p)) = r.props else { panic!("{r:?}") };
        assert!(p.feet_occlusion);
        assert_eq!(p.direction, PedDirection::WW);
    }

    #[test]
    fn non_descript_has_only_size() {
        let h = [BBox::new(10.0, 10.0, 32.0, 28.0)];
        let r = assemble_record(&ctx(ObjectType::NonDescript, &h, &NoBackend)).unwrap();
        assert_eq!(r.props, None);
        assert_eq!(r.size, h[0]);
    }

    #[test]
    fn complete_oracle_is_reproduced_verbatim() {
        let table = Table(BTreeMap::from([
            (Property::Occlusion, PropertyValue::Occlusion(Occlusion::Partial)),
            (Property::HeadOcclusion, PropertyValue::Flag(true)),
            (Property::FeetOcclusion, PropertyValue::Flag(false)),
            (Property::Direction, PropertyValue::Direction(Direction::Oncoming)),
            (Property::Pose, PropertyValue::Pose(Pose::FrontLeft)),
            (Property::Lighting, PropertyValue::Lighting(Lighting::Glare)),
        ]));
        let h = [BBox::new(50.0, 60.0, 90.0, 140.0); 2];
        let r = assemble_record(&ctx(ObjectType::Cyclist, &h, &table)).unwrap();
        let props = r.props.unwrap();
        for (p, v) in &table.0 {
            assert_eq!(props.property(*p), Some(*v), "{p}");
        }
    }

    #[test]
    fn wrong_label_kind_is_an_error() {
        let table = Table(BTreeMap::from([(Property::Pose, PropertyValue::Flag(true))]));
        let h = [BBox::new(50.0, 60.0, 90.0, 140.0)];
        let err = assemble_record(&ctx(ObjectType::Car, &h, &table)).unwrap_err();
        assert!(matches!(err, PropertyError::WrongKind { property: Property::Pose, .. }));
    }

    #[test]
    fn invalid_assembly_is_reported() {
        let h = [BBox::new(50.0, 60.0, 50.0, 140.0)];
        let err = assemble_record(&ctx(ObjectType::Car, &h, &NoBackend)).unwrap_err();
        assert!(matches!(err, PropertyError::InvalidRecord { track_id: 7, .. }));
    }
}
