//! Seeded synthetic driving scenes with exact ground truth.
//!
//! Lane boundaries are straight lines converging on a vanishing point above
//! the image. Objects are speckle-textured boxes on a low-contrast road, so
//! FAST finds corners on objects and nowhere else.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    encode_pgm, frame_path, lane_mask_path, postprocess_detection, DetectionWire, FrameWire,
    GrayImage, LabelWire, ManifestWire, OracleFrameWire, OracleObjectWire, OracleWire,
    PropertyOracle, SceneConfig,
};
use crate::lanes::{assign_lane, LaneModel, Line};
use crate::motion::{detect_lane_change, movement_from_distance, center_distance};
use crate::properties::{assemble_record, RuleContext};
use crate::schema::{
    serialize, AnnotationDocument, BBox, Category, FrameRecords, LaneId, ObjectType, Property,
    SchemaError,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("ground truth assembly failed: {0}")]
    Assembly(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    /// Moves up and down its lane at `speed`.
    Drive,
    /// Never moves; placed at `position`.
    Park,
    /// Never moves; placed at `position`.
    Stand,
    /// Drives while crossing from `lane` to `target_lane` over the middle third.
    LaneChange,
    /// Approaches down the image at `speed`, growing with perspective.
    Oncoming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthObject {
    #[serde(rename = "type")]
    pub object_type: ObjectType,
    pub behavior: Behavior,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane: Option<LaneId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_lane: Option<LaneId>,
    /// Box centre column and bottom row for parked and standing objects.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 2]>,
    /// Pixels per frame.
    #[serde(default)]
    pub speed: f64,
    /// Width and height; defaults depend on the type.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<[f64; 2]>,
    /// Rows the bottom edge travels between.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_range: Option<[f64; 2]>,
    /// Oracle labels overriding the defaults.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, LabelWire>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthNoise {
    /// Standard deviation of the per-coordinate box jitter, in pixels.
    pub bbox_sigma: f64,
    pub drop_probability: f64,
    /// Probability of one spurious detection per frame.
    pub false_positive_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub sequence_id: String,
    pub frames: u64,
    pub width: u32,
    pub height: u32,
    pub boundaries: usize,
    /// Lane width at the bottom row.
    pub lane_width: f64,
    pub seed: u64,
    pub objects: Vec<SynthObject>,
    pub noise: SynthNoise,
}

fn object(object_type: ObjectType, behavior: Behavior) -> SynthObject {
    SynthObject {
        object_type,
        behavior,
        lane: None,
        target_lane: None,
        position: None,
        speed: 0.0,
        size: None,
        y_range: None,
        labels: BTreeMap::new(),
    }
}

impl Default for SynthConfig {
    /// Four boundaries; a car driving in lane -1, a car changing from the
    /// ego lane to +1, a car parked off the road and a standing pedestrian.
    fn default() -> Self {
        Self {
            sequence_id: "synth".to_string(),
            frames: 120,
            width: 480,
            height: 360,
            boundaries: 4,
            lane_width: 100.0,
            seed: 42,
            objects: vec![
                SynthObject {
                    lane: Some(LaneId::Neg1),
                    speed: 8.0,
                    y_range: Some([200.0, 352.0]),
                    ..object(ObjectType::Car, Behavior::Drive)
                },
                SynthObject {
                    lane: Some(LaneId::Ego),
                    target_lane: Some(LaneId::Pos1),
                    speed: 7.0,
                    y_range: Some([215.0, 345.0]),
                    ..object(ObjectType::Car, Behavior::LaneChange)
                },
                SynthObject { position: Some([434.0, 300.0]), ..object(ObjectType::Car, Behavior::Park) },
                SynthObject {
                    position: Some([40.0, 330.0]),
                    ..object(ObjectType::Pedestrian, Behavior::Stand)
                },
            ],
            noise: SynthNoise::default(),
        }
    }
}

impl SynthConfig {
    fn scene(&self) -> SceneConfig {
        SceneConfig::new(self.width, self.height)
    }

    fn vanishing_y(&self) -> f64 {
        -(self.height as f64)
    }

    fn bottom_y(&self) -> f64 {
        self.height as f64 - 1.0
    }

    /// Perspective factor of row `y`: 1 at the bottom row, 0 at the vanishing point.
    fn depth(&self, y: f64) -> f64 {
        (y - self.vanishing_y()) / (self.bottom_y() - self.vanishing_y())
    }

    fn anchor(&self) -> f64 {
        self.scene().ego_anchor_x
    }

    /// Bottom-row column of each boundary.
    pub fn boundary_columns(&self) -> Vec<f64> {
        let c = (self.boundaries as f64 - 1.0) / 2.0;
        (0..self.boundaries).map(|j| self.anchor() + (j as f64 - c) * self.lane_width).collect()
    }

    pub fn boundary_lines(&self) -> Vec<Line> {
        let vp = (self.anchor(), self.vanishing_y());
        self.boundary_columns().into_iter().map(|x| Line::through((x, self.bottom_y()), vp)).collect()
    }

    pub fn lane_model(&self) -> Result<LaneModel, SynthError> {
        LaneModel::from_boundaries(self.boundary_lines(), &self.scene())
            .map_err(|e| SynthError::Config(e.to_string()))
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if !(2..=6).contains(&self.boundaries) {
            return bad(format!("boundaries must be 2..=6, got {}", self.boundaries));
        }
        if self.width < 64 || self.height < 64 {
            return bad("image must be at least 64x64".into());
        }
        if !(self.lane_width > 0.0) {
            return bad("lane_width must be positive".into());
        }
        let n = &self.noise;
        if !(n.bbox_sigma >= 0.0)
            || !(0.0..=1.0).contains(&n.drop_probability)
            || !(0.0..=1.0).contains(&n.false_positive_rate)
        {
            return bad("noise parameters out of range".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.object_type == ObjectType::NonDescript {
                return bad(format!("object {i}: non-descript is not a scene type"));
            }
            match o.behavior {
                Behavior::Park | Behavior::Stand if o.position.is_none() => {
                    return bad(format!("object {i}: {:?} needs a position", o.behavior));
                }
                Behavior::Drive | Behavior::LaneChange | Behavior::Oncoming
                    if !o.lane.is_some_and(|l| l.is_numbered()) =>
                {
                    return bad(format!("object {i}: {:?} needs a numbered lane", o.behavior));
                }
                _ => {}
            }
            if let Some([w, h]) = o.size {
                if !(w > 0.0 && h > 0.0) {
                    return bad(format!("object {i}: size must be positive"));
                }
            }
        }
        Ok(())
    }
}

fn default_size(t: ObjectType) -> [f64; 2] {
    match t.category() {
        Category::Vehicle => [64.0, 48.0],
        Category::TwoWheeler => [30.0, 50.0],
        Category::Pedestrian | Category::NonDescript => [20.0, 50.0],
    }
}

fn triangle(lo: f64, hi: f64, s: f64) -> f64 {
    let range = hi - lo;
    if range <= 0.0 {
        return lo;
    }
    let p = s.rem_euclid(2.0 * range);
    lo + if p < range { p } else { 2.0 * range - p }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Scripted position of every object in every frame.
struct Trajectories {
    /// `boxes[object][frame]`
    boxes: Vec<Vec<BBox>>,
    /// Texture magnification per object and frame.
    scales: Vec<Vec<f64>>,
}

fn lane_center_units(cfg: &SynthConfig, model: &LaneModel, lane: LaneId) -> Result<f64, SynthError> {
    let (_, l, r) = model
        .intervals_at(model.bottom_y)
        .into_iter()
        .find(|(id, _, _)| *id == lane)
        .ok_or_else(|| SynthError::Config(format!("lane {lane} does not exist in the scene")))?;
    Ok(((l + r) / 2.0 - cfg.anchor()) / cfg.lane_width)
}

fn trajectories(cfg: &SynthConfig, model: &LaneModel) -> Result<Trajectories, SynthError> {
    let n = cfg.frames as usize;
    let mut boxes = Vec::with_capacity(cfg.objects.len());
    let mut scales = Vec::with_capacity(cfg.objects.len());
    for (i, o) in cfg.objects.iter().enumerate() {
        let [w, h] = o.size.unwrap_or_else(|| default_size(o.object_type));
        let [y_lo, y_hi] = o.y_range.unwrap_or([cfg.height as f64 * 0.55, cfg.bottom_y() - 4.0]);
        let at = |u: f64, bottom: f64, scale: f64| {
            let cx = cfg.anchor() + u * cfg.lane_width * cfg.depth(bottom);
            BBox::new(cx - w * scale / 2.0, bottom - h * scale, cx + w * scale / 2.0, bottom)
        };
        // stagger start phases so objects do not move in lockstep
        let phase = (i as f64 * 37.0).rem_euclid((y_hi - y_lo).max(1.0));
        let mut ob = Vec::with_capacity(n);
        let mut os = Vec::with_capacity(n);
        for t in 0..n {
            let tf = t as f64;
            let (b, s) = match o.behavior {
                Behavior::Park | Behavior::Stand => {
                    let [cx, bottom] = o.position.expect("validated");
                    (BBox::new(cx - w / 2.0, bottom - h, cx + w / 2.0, bottom), 1.0)
                }
                Behavior::Drive => {
                    let u = lane_center_units(cfg, model, o.lane.expect("validated"))?;
                    (at(u, triangle(y_lo, y_hi, phase + o.speed * tf), 1.0), 1.0)
                }
                Behavior::LaneChange => {
                    let from = o.lane.expect("validated");
                    let to = o
                        .target_lane
                        .unwrap_or_else(|| LaneId::from_offset(from.offset().unwrap_or(0) + 1));
                    let (u0, u1) = (lane_center_units(cfg, model, from)?, lane_center_units(cfg, model, to)?);
                    let start = cfg.frames as f64 / 3.0;
                    let k = smoothstep((tf - start) / 30.0);
                    let bottom = triangle(y_lo, y_hi, phase + o.speed * tf);
                    (at(u0 + (u1 - u0) * k, bottom, 1.0), 1.0)
                }
                Behavior::Oncoming => {
                    let u = lane_center_units(cfg, model, o.lane.expect("validated"))?;
                    let bottom = (y_lo + o.speed * tf).min(y_hi);
                    let s = cfg.depth(bottom) / cfg.depth(y_lo);
                    (at(u, bottom, s), s)
                }
            };
            ob.push(b);
            os.push(s);
        }
        boxes.push(ob);
        scales.push(os);
    }
    Ok(Trajectories { boxes, scales })
}

const TEXTURE_BLOCK: usize = 3;
const ROAD_LEVEL: u8 = 100;
const ROAD_NOISE: u8 = 6;
const MARK_LEVEL: u8 = 230;

struct Texture {
    cols: usize,
    blocks: Vec<u8>,
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng, w: f64, h: f64, max_scale: f64) -> Self {
        let cols = (w * max_scale) as usize / TEXTURE_BLOCK + 2;
        let rows = (h * max_scale) as usize / TEXTURE_BLOCK + 2;
        Self { cols, blocks: (0..cols * rows).map(|_| rng.gen()).collect() }
    }

    fn sample(&self, u: f64, v: f64) -> u8 {
        let (c, r) = ((u / TEXTURE_BLOCK as f64) as usize, (v / TEXTURE_BLOCK as f64) as usize);
        self.blocks.get(r * self.cols + c.min(self.cols - 1)).copied().unwrap_or(0)
    }
}

/// Pixel columns (inclusive) covered by a 3 px mark centred on `x`.
fn mark_columns(x: f64, width: usize) -> impl Iterator<Item = usize> {
    let c = x.round() as i64;
    (c - 1..=c + 1).filter(move |&v| v >= 0 && (v as usize) < width).map(|v| v as usize)
}

fn render_marks(cfg: &SynthConfig, frame: &mut GrayImage, mask: &mut GrayImage) {
    for (j, line) in cfg.boundary_lines().iter().enumerate() {
        for y in 0..cfg.height as usize {
            let Some(x) = line.x_at(y as f64) else { continue };
            for col in mark_columns(x, cfg.width as usize) {
                frame.set(col, y, MARK_LEVEL);
                mask.set(col, y, (j + 1) as u8);
            }
        }
    }
}

fn paint(frame: &mut GrayImage, b: &BBox, scale: f64, tex: &Texture) {
    let x0 = b.minx.ceil().max(0.0) as usize;
    let y0 = b.miny.ceil().max(0.0) as usize;
    let x1 = (b.maxx.ceil() as usize).min(frame.width());
    let y1 = (b.maxy.ceil() as usize).min(frame.height());
    for y in y0..y1 {
        for x in x0..x1 {
            let u = (x as f64 - b.minx) / scale;
            let v = (y as f64 - b.miny) / scale;
            frame.set(x, y, tex.sample(u, v));
        }
    }
}

/// Generated scene held in memory.
pub struct SynthScene {
    pub frames: Vec<GrayImage>,
    pub masks: Vec<GrayImage>,
    pub detections: ManifestWire,
    pub oracle: OracleWire,
    pub ground_truth: AnnotationDocument,
}

fn oracle_labels(o: &SynthObject) -> BTreeMap<String, LabelWire> {
    let category = o.object_type.category();
    let mut labels: BTreeMap<String, LabelWire> = category
        .properties()
        .iter()
        .map(|&p| {
            let v = crate::ingest::default_label(p, category);
            let v = match (p, o.behavior) {
                (Property::Direction, Behavior::Oncoming) if category != Category::Pedestrian => {
                    "oncoming".to_string()
                }
                _ => v.label().to_string(),
            };
            (p.as_str().to_string(), LabelWire::Text(v))
        })
        .collect();
    for (k, v) in &o.labels {
        labels.insert(k.clone(), v.clone());
    }
    labels
}

fn wire_box(b: &BBox) -> [f64; 4] {
    let q = b.quantized();
    [q.minx, q.miny, q.maxx, q.maxy]
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthScene, SynthError> {
    cfg.validate()?;
    let model = cfg.lane_model()?;
    let traj = trajectories(cfg, &model)?;
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let textures: Vec<Texture> = cfg
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let [ow, oh] = o.size.unwrap_or_else(|| default_size(o.object_type));
            let max_scale = traj.scales[i].iter().copied().fold(1.0, f64::max);
            Texture::new(&mut rng, ow, oh, max_scale)
        })
        .collect();

    let mut frames = Vec::with_capacity(cfg.frames as usize);
    let mut masks = Vec::with_capacity(cfg.frames as usize);
    for t in 0..cfg.frames as usize {
        let mut frame = GrayImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let n: u8 = rng.gen_range(0..=2 * ROAD_NOISE);
                frame.set(x, y, ROAD_LEVEL - ROAD_NOISE + n);
            }
        }
        let mut mask = GrayImage::new(w, h);
        render_marks(cfg, &mut frame, &mut mask);
        for (i, tex) in textures.iter().enumerate() {
            paint(&mut frame, &traj.boxes[i][t], traj.scales[i][t], tex);
        }
        frames.push(frame);
        masks.push(mask);
    }

    let normal = Normal::new(0.0, cfg.noise.bbox_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| SynthError::Config(e.to_string()))?;
    let mut det_frames = Vec::with_capacity(cfg.frames as usize);
    for t in 0..cfg.frames as usize {
        let mut detections = Vec::new();
        for (i, o) in cfg.objects.iter().enumerate() {
            if rng.gen::<f64>() < cfg.noise.drop_probability {
                continue;
            }
            let mut b = traj.boxes[i][t];
            if cfg.noise.bbox_sigma > 0.0 {
                let j: [f64; 4] = std::array::from_fn(|_| normal.sample(&mut rng));
                let jittered = BBox::new(b.minx + j[0], b.miny + j[1], b.maxx + j[2], b.maxy + j[3]);
                if jittered.width() > 1.0 && jittered.height() > 1.0 {
                    b = jittered;
                }
            }
            let score = 0.6 + 0.4 * rng.gen::<f64>();
            detections.push(DetectionWire {
                class: o.object_type.as_str().to_string(),
                score: (score * 1e4).round() / 1e4,
                bbox: wire_box(&b),
            });
        }
        if rng.gen::<f64>() < cfg.noise.false_positive_rate {
            let classes = ObjectType::detector_classes();
            let class = classes[rng.gen_range(0..classes.len())];
            let (bw, bh) = (rng.gen_range(30.0..80.0), rng.gen_range(30.0..80.0));
            let (x, y) = (rng.gen_range(0.0..w as f64 - bw), rng.gen_range(0.0..h as f64 - bh));
            detections.push(DetectionWire {
                class: class.as_str().to_string(),
                score: (rng.gen_range(0.05..0.5f64) * 1e4).round() / 1e4,
                bbox: wire_box(&BBox::new(x, y, x + bw, y + bh)),
            });
        }
        det_frames.push(FrameWire { index: t as u64, detections });
    }
    let detections = ManifestWire {
        sequence_id: cfg.sequence_id.clone(),
        image_width: cfg.width,
        image_height: cfg.height,
        frames: det_frames,
    };

    let labels: Vec<BTreeMap<String, LabelWire>> = cfg.objects.iter().map(oracle_labels).collect();
    let oracle = OracleWire {
        frames: (0..cfg.frames as usize)
            .map(|t| OracleFrameWire {
                index: t as u64,
                objects: cfg
                    .objects
                    .iter()
                    .enumerate()
                    .map(|(i, _)| OracleObjectWire {
                        bbox: wire_box(&traj.boxes[i][t]),
                        labels: labels[i].clone(),
                    })
                    .collect(),
            })
            .collect(),
    };

    let ground_truth = ground_truth(cfg, &model, &traj, &oracle)?;
    Ok(SynthScene { frames, masks, detections, oracle, ground_truth })
}

/// Movement threshold used for ground-truth movement labels.
pub const GT_MOVEMENT_THRESHOLD_PX: f64 = 6.0;
/// Stable-run length used for ground-truth lane changes.
pub const GT_LANE_CHANGE_WINDOW: usize = 3;

fn ground_truth(
    cfg: &SynthConfig,
    model: &LaneModel,
    traj: &Trajectories,
    oracle: &OracleWire,
) -> Result<AnnotationDocument, SynthError> {
    let backend = PropertyOracle::from_wire(oracle.clone()).map_err(|e| SynthError::Config(e.to_string()))?;
    let scene = cfg.scene();
    let mut doc = AnnotationDocument::new(cfg.sequence_id.clone());
    let quantized: Vec<Vec<BBox>> =
        traj.boxes.iter().map(|bs| bs.iter().map(BBox::quantized).collect()).collect();
    let mut lane_histories: Vec<Vec<LaneId>> = vec![Vec::new(); cfg.objects.len()];
    for t in 0..cfg.frames as usize {
        let mut records = Vec::new();
        for (i, o) in cfg.objects.iter().enumerate() {
            let bs = &quantized[i];
            let lane = assign_lane(&bs[t], model);
            lane_histories[i].push(lane);
            let displacement = match t {
                0 if bs.len() > 1 => center_distance(&bs[0], &bs[1]),
                0 => 0.0,
                _ => center_distance(&bs[t - 1], &bs[t]),
            };
            let det = crate::ingest::Detection { class: o.object_type, score: 1.0, bbox: bs[t] };
            let object_type = postprocess_detection(&det, &scene, None).class;
            let ctx = RuleContext {
                frame: t as u64,
                track_id: i as u64 + 1,
                object_type,
                bbox_history: &bs[..=t],
                lane,
                movement: movement_from_distance(displacement, lane, GT_MOVEMENT_THRESHOLD_PX),
                lane_change: detect_lane_change(&lane_histories[i], GT_LANE_CHANGE_WINDOW),
                previous_heading: None,
                backend: &backend,
            };
            records.push(assemble_record(&ctx).map_err(|e| SynthError::Assembly(e.to_string()))?);
        }
        doc.frames.push(FrameRecords { index: t as u64, records });
    }
    Ok(doc)
}

/// Files written by [`run_synth`], relative to the output directory.
pub const FRAMES_DIR: &str = "frames";
pub const MASKS_DIR: &str = "masks";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const ORACLE_FILE: &str = "oracle.json";
pub const GT_FILE: &str = "gt.json";
pub const ANNOTATE_CONFIG_FILE: &str = "annotate.json";
pub const ANNOTATIONS_FILE: &str = "annotations.json";

fn write(path: PathBuf, bytes: &[u8]) -> Result<(), SynthError> {
    fs::write(&path, bytes).map_err(|source| SynthError::Io { path: path.display().to_string(), source })
}

fn mkdir(path: &Path) -> Result<(), SynthError> {
    fs::create_dir_all(path).map_err(|source| SynthError::Io { path: path.display().to_string(), source })
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("wire types serialize");
    s.push('\n');
    s.into_bytes()
}

/// Writes a scene to `out_dir`, including a ready-to-run annotate config.
pub fn write_scene(scene: &SynthScene, out_dir: &Path) -> Result<(), SynthError> {
    let frames_dir = out_dir.join(FRAMES_DIR);
    let masks_dir = out_dir.join(MASKS_DIR);
    mkdir(&frames_dir)?;
    mkdir(&masks_dir)?;
    for (t, (f, m)) in scene.frames.iter().zip(&scene.masks).enumerate() {
        write(frame_path(&frames_dir, t as u64), &encode_pgm(f))?;
        write(lane_mask_path(&masks_dir, t as u64), &encode_pgm(m))?;
    }
    write(out_dir.join(DETECTIONS_FILE), &pretty(&scene.detections))?;
    write(out_dir.join(ORACLE_FILE), &pretty(&scene.oracle))?;
    write(out_dir.join(GT_FILE), serialize(&scene.ground_truth)?.as_bytes())?;
    let annotate = serde_json::json!({
        "detections": DETECTIONS_FILE,
        "frames_dir": FRAMES_DIR,
        "lane_masks_dir": MASKS_DIR,
        "oracle": ORACLE_FILE,
        "output": ANNOTATIONS_FILE,
    });
    write(out_dir.join(ANNOTATE_CONFIG_FILE), &pretty(&annotate))?;
    Ok(())
}

pub fn run_synth(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthScene, SynthError> {
    let scene = generate(cfg)?;
    write_scene(&scene, out_dir)?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Movement, Props};

    fn small() -> SynthConfig {
        SynthConfig { frames: 20, ..SynthConfig::default() }
    }

    #[test]
    fn default_scene_layout() {
        let cfg = SynthConfig::default();
        assert_eq!(cfg.boundary_columns(), vec![90.0, 190.0, 290.0, 390.0]);
        let model = cfg.lane_model().unwrap();
        let ids: Vec<LaneId> = model.lanes.iter().map(|l| l.id).collect();
        assert_eq!(ids, vec![LaneId::Neg1, LaneId::Ego, LaneId::Pos1]);
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.detections, b.detections);
        assert_eq!(a.ground_truth, b.ground_truth);
        let c = generate(&SynthConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn right_lane_object_is_always_plus_one() {
        let cfg = SynthConfig {
            objects: vec![SynthObject {
                lane: Some(LaneId::Pos1),
                speed: 6.0,
                ..object(ObjectType::Truck, Behavior::Drive)
            }],
            frames: 60,
            ..SynthConfig::default()
        };
        let s = generate(&cfg).unwrap();
        for r in s.ground_truth.records() {
            assert_eq!(r.props.unwrap().lane(), Some(LaneId::Pos1), "frame {}", r.frame_index);
        }
    }

    #[test]
    fn lane_change_flips_exactly_once() {
        let s = generate(&SynthConfig::default()).unwrap();
        let flags: Vec<bool> = s
            .ground_truth
            .records()
            .filter(|r| r.track_id == 2)
            .map(|r| r.props.unwrap().lane_change().unwrap())
            .collect();
        let flips = flags.windows(2).filter(|w| !w[0] && w[1]).count();
        assert_eq!(flips, 1);
        assert!(!flags[0] && *flags.last().unwrap());
    }

    #[test]
    fn parked_and_standing_objects() {
        let s = generate(&small()).unwrap();
        for r in s.ground_truth.records() {
            match r.track_id {
                3 => {
                    let Some(Props::Vehicle(v)) = r.props else { panic!() };
                    assert_eq!((v.lane, v.movement), (LaneId::Unknown, Movement::Parked));
                }
                4 => assert_eq!(r.props.unwrap().movement(), Movement::Parked),
                1 => assert_eq!(r.props.unwrap().lane(), Some(LaneId::Neg1)),
                _ => {}
            }
        }
    }

    #[test]
    fn road_stays_below_the_corner_threshold() {
        let s = generate(&small()).unwrap();
        let f = &s.frames[0];
        // a patch of bare road in the ego lane far above the objects
        let roi = BBox::new(200.0, 20.0, 280.0, 100.0);
        assert!(crate::motion::fast_corners(f, &roi, 20, 64).is_empty());
        let b = s.ground_truth.frames[0].records[0].size;
        assert!(!crate::motion::fast_corners(f, &b, 20, 64).is_empty());
    }

    #[test]
    fn noise_drops_and_jitters() {
        let cfg = SynthConfig {
            noise: SynthNoise { bbox_sigma: 2.0, drop_probability: 0.2, false_positive_rate: 0.5 },
            ..small()
        };
        let s = generate(&cfg).unwrap();
        let n: usize = s.detections.frames.iter().map(|f| f.detections.len()).sum();
        assert_ne!(n, 4 * 20);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(matches!(generate(&SynthConfig { boundaries: 7, ..small() }), Err(SynthError::Config(_))));
        let park_without_position = SynthConfig { objects: vec![object(ObjectType::Car, Behavior::Park)], ..small() };
        assert!(generate(&park_without_position).is_err());
        let missing_lane = SynthConfig {
            objects: vec![SynthObject { lane: Some(LaneId::Pos2), ..object(ObjectType::Car, Behavior::Drive) }],
            ..small()
        };
        assert!(generate(&missing_lane).is_err());
    }

    #[test]
    fn writes_a_runnable_directory() {
        let dir = tempfile::tempdir().unwrap();
        run_synth(&SynthConfig { frames: 3, ..small() }, dir.path()).unwrap();
        for f in [DETECTIONS_FILE, ORACLE_FILE, GT_FILE, ANNOTATE_CONFIG_FILE] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        assert!(dir.path().join("frames/frame_000002.pgm").is_file());
        assert!(dir.path().join("masks/lane_000002.pgm").is_file());
        let gt = crate::schema::parse(&fs::read_to_string(dir.path().join(GT_FILE)).unwrap()).unwrap();
        assert_eq!(gt.frames.len(), 3);
    }
}
