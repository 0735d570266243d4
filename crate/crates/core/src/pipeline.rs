//! Per-frame orchestration of the annotation stages and the evaluate entry point.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    frame_path, lane_mask_path, load_detection_manifest, load_image, postprocess_detection_with,
    Detection, DetectionManifest, GrayImage, IngestError, NoBackend, PropertyBackend,
    PropertyOracle, SceneConfig,
};
use crate::lanes::{assign_lane, build_lane_model, LaneDump, LaneModel};
use crate::metrics::{evaluate, EvalConfig, Interpolation, MetricsReport, Stage, TimeUnit, TimingTable};
use crate::motion::{
    center_distance, detect_lane_change, estimate_motion, movement_from_distance, MotionConfig,
};
use crate::properties::{assemble_record, vehicle_direction, PropertyError, RuleContext};
use crate::schema::{
    self, validate_document, AnnotationDocument, AnnotationRecord, BBox, Category, Direction,
    FrameRecords, LaneId, Movement, ObjectType, PedDirection, Props, SchemaError,
};
use crate::tracker::{TrackDump, TrackStatus, Tracker, TrackerConfig, TrackerError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("frame {index}: missing {kind} {path}")]
    MissingInput { index: u64, kind: &'static str, path: String },
    #[error("{dir} holds {found} frame images but the manifest lists {expected} frames")]
    FrameCountMismatch { dir: String, expected: usize, found: usize },
    #[error("frame {index}: {kind} is {found_w}x{found_h}, expected {w}x{h}")]
    ImageSize { index: u64, kind: &'static str, found_w: usize, found_h: usize, w: u32, h: u32 },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Document { path: String, source: SchemaError },
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("tracker invariant violated: {0}")]
    Tracker(#[from] TrackerError),
    #[error("record assembly failed: {0}")]
    Property(#[from] PropertyError),
    #[error("pipeline produced an invalid document: {0}")]
    InvalidOutput(SchemaError),
}

impl PipelineError {
    /// True for failures that indicate a bug rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(
            self,
            PipelineError::Tracker(_)
                | PipelineError::Property(_)
                | PipelineError::InvalidOutput(_)
                | PipelineError::Pool(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub movement_threshold_px: f64,
    pub nondescript_px: f64,
    pub iou_gate: f64,
    pub fast_threshold: u8,
    pub n_init: u32,
    pub max_age: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            movement_threshold_px: 6.0,
            nondescript_px: 30.0,
            iou_gate: 0.3,
            fast_threshold: 20,
            n_init: 3,
            max_age: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSettings {
    pub median_present: bool,
    /// Defaults to the image centre.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ego_anchor_x: Option<f64>,
}

/// Annotate configuration. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub detections: PathBuf,
    pub frames_dir: PathBuf,
    pub lane_masks_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<PathBuf>,
    pub output: PathBuf,
    #[serde(default)]
    pub scene: SceneSettings,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub ap_interpolation: Interpolation,
    #[serde(default = "default_workers")]
    pub worker_count: usize,
}

fn default_workers() -> usize {
    1
}

impl PipelineConfig {
    pub fn new(dir: &Path) -> Self {
        Self {
            detections: dir.join(crate::synth::DETECTIONS_FILE),
            frames_dir: dir.join(crate::synth::FRAMES_DIR),
            lane_masks_dir: dir.join(crate::synth::MASKS_DIR),
            oracle: Some(dir.join(crate::synth::ORACLE_FILE)),
            output: dir.join(crate::synth::ANNOTATIONS_FILE),
            scene: SceneSettings::default(),
            thresholds: Thresholds::default(),
            ap_interpolation: Interpolation::AllPoint,
            worker_count: 1,
        }
    }

    /// Reads a config file and resolves its paths.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let err = |message: String| PipelineError::Config { path: path.display().to_string(), message };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut cfg: PipelineConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| err(format!("at {}: {}", e.path(), e.inner())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.detections, &mut cfg.frames_dir, &mut cfg.lane_masks_dir, &mut cfg.output] {
            *p = base.join(&*p);
        }
        if let Some(o) = &mut cfg.oracle {
            *o = base.join(&*o);
        }
        cfg.validate().map_err(err)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let t = &self.thresholds;
        let positive = [
            ("movement_threshold_px", t.movement_threshold_px),
            ("nondescript_px", t.nondescript_px),
            ("iou_gate", t.iou_gate),
            ("fast_threshold", t.fast_threshold as f64),
            ("n_init", t.n_init as f64),
            ("max_age", t.max_age as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(format!("threshold {name} must be positive"));
            }
        }
        if t.iou_gate > 1.0 {
            return Err("threshold iou_gate must not exceed 1".into());
        }
        if self.worker_count == 0 {
            return Err("worker_count must be at least 1".into());
        }
        Ok(())
    }

    fn motion(&self) -> MotionConfig {
        MotionConfig {
            fast_threshold: self.thresholds.fast_threshold,
            movement_threshold_px: self.thresholds.movement_threshold_px,
            ..MotionConfig::default()
        }
    }

    fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            iou_gate: self.thresholds.iou_gate,
            n_init: self.thresholds.n_init,
            max_age: self.thresholds.max_age,
            ..TrackerConfig::default()
        }
    }

    fn scene_for(&self, manifest: &DetectionManifest) -> SceneConfig {
        let mut s = SceneConfig::new(manifest.image_width, manifest.image_height);
        s.median_present = self.scene.median_present;
        if let Some(x) = self.scene.ego_anchor_x {
            s.ego_anchor_x = x;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DumpOptions {
    pub lanes: bool,
    pub tracks: bool,
}

#[derive(Debug, Clone)]
pub struct AnnotateOutput {
    pub document: AnnotationDocument,
    /// Wall-clock seconds per stage.
    pub timing: TimingTable,
    pub lane_dumps: Vec<LaneDump>,
    pub track_dumps: Vec<TrackDump>,
}

fn count_frame_images(dir: &Path) -> Result<usize, PipelineError> {
    let entries = fs::read_dir(dir)
        .map_err(|source| PipelineError::Io { path: dir.display().to_string(), source })?;
    Ok(entries
        .filter_map(Result::ok)
        .filter(|e| {
            let name = e.file_name();
            let name = name.to_string_lossy();
            name.starts_with("frame_") && name.ends_with(".pgm")
        })
        .count())
}

fn load_checked(
    path: PathBuf,
    index: u64,
    kind: &'static str,
    manifest: &DetectionManifest,
) -> Result<GrayImage, PipelineError> {
    if !path.is_file() {
        return Err(PipelineError::MissingInput { index, kind, path: path.display().to_string() });
    }
    let img = load_image(&path)?;
    if img.width() != manifest.image_width as usize || img.height() != manifest.image_height as usize {
        return Err(PipelineError::ImageSize {
            index,
            kind,
            found_w: img.width(),
            found_h: img.height(),
            w: manifest.image_width,
            h: manifest.image_height,
        });
    }
    Ok(img)
}

/// Per-object work that only reads shared state.
struct ObjectJob {
    track_id: u64,
    bbox: BBox,
    object_type: ObjectType,
    history: Vec<BBox>,
    lane: LaneId,
    lane_change: bool,
    /// Previous observation, when it was in the previous frame.
    prev: Option<(BBox, u64)>,
    previous_heading: Option<PedDirection>,
    confirmed: bool,
}

struct ObjectResult {
    track_id: u64,
    movement: Movement,
    record: Option<AnnotationRecord>,
}

#[allow(clippy::too_many_arguments)]
fn process_object(
    job: &ObjectJob,
    frame: u64,
    image: &GrayImage,
    prev_image: Option<&GrayImage>,
    scene: &SceneConfig,
    cfg: &PipelineConfig,
    motion: &MotionConfig,
    backend: &dyn PropertyBackend,
) -> Result<ObjectResult, PropertyError> {
    let distance = match (job.prev, prev_image) {
        (Some((pb, pf)), Some(pi)) if pf + 1 == frame => {
            estimate_motion(pi, image, &pb, &job.bbox, motion).mean_distance
        }
        (Some((pb, pf)), _) => center_distance(&pb, &job.bbox) / (frame - pf) as f64,
        (None, _) => 0.0,
    };
    let movement = movement_from_distance(distance, job.lane, motion.movement_threshold_px);
    if !job.confirmed {
        return Ok(ObjectResult { track_id: job.track_id, movement, record: None });
    }
    let mut ctx = RuleContext {
        frame,
        track_id: job.track_id,
        object_type: job.object_type,
        bbox_history: &job.history,
        lane: job.lane,
        movement,
        lane_change: job.lane_change,
        previous_heading: job.previous_heading,
        backend,
    };
    // median rule: needs the direction, so it runs after the first pass
    if matches!(job.object_type.category(), Category::Vehicle | Category::TwoWheeler) {
        let direction = vehicle_direction(&ctx)?;
        let det = Detection { class: job.object_type, score: 1.0, bbox: job.bbox };
        let hint = Some(direction).filter(|d| *d == Direction::Oncoming);
        ctx.object_type = postprocess_detection_with(&det, scene, hint, cfg.thresholds.nondescript_px).class;
    }
    let record = assemble_record(&ctx)?;
    Ok(ObjectResult { track_id: job.track_id, movement, record: Some(record) })
}

/// Runs every stage over the sequence described by `cfg`.
pub fn run_annotate(cfg: &PipelineConfig, dumps: DumpOptions) -> Result<AnnotateOutput, PipelineError> {
    cfg.validate().map_err(|message| PipelineError::Config { path: "<memory>".into(), message })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let mut timing = TimingTable::new(TimeUnit::Seconds);
    for s in Stage::ALL {
        timing.add(s, 0.0);
    }

    let started = Instant::now();
    let manifest = load_detection_manifest(&cfg.detections)?;
    let oracle = cfg.oracle.as_deref().map(PropertyOracle::load).transpose()?;
    let backend: &dyn PropertyBackend = match &oracle {
        Some(o) => o,
        None => &NoBackend,
    };
    let found = count_frame_images(&cfg.frames_dir)?;
    if found != manifest.frames.len() {
        return Err(PipelineError::FrameCountMismatch {
            dir: cfg.frames_dir.display().to_string(),
            expected: manifest.frames.len(),
            found,
        });
    }
    let scene = cfg.scene_for(&manifest);
    let motion = cfg.motion();
    timing.add(Stage::DetectionIngest, started.elapsed().as_secs_f64());

    let mut tracker = Tracker::new(cfg.tracker());
    let mut document = AnnotationDocument::new(manifest.sequence_id.clone());
    let mut lane_dumps = Vec::new();
    let mut track_dumps = Vec::new();
    let mut prev_image: Option<GrayImage> = None;

    for frame in &manifest.frames {
        let t = Instant::now();
        let image = load_checked(frame_path(&cfg.frames_dir, frame.index), frame.index, "frame", &manifest)?;
        let detections: Vec<Detection> = frame
            .detections
            .iter()
            .map(|d| postprocess_detection_with(d, &scene, None, cfg.thresholds.nondescript_px))
            .collect();
        timing.add(Stage::DetectionIngest, t.elapsed().as_secs_f64());

        let t = Instant::now();
        let mask = load_checked(lane_mask_path(&cfg.lane_masks_dir, frame.index), frame.index, "lane mask", &manifest)?;
        let lane_result = build_lane_model(&mask, &scene);
        if dumps.lanes {
            lane_dumps.push(LaneDump::from_result(frame.index, &lane_result));
        }
        let lane_model: Option<LaneModel> = lane_result.ok();
        timing.add(Stage::Lane, t.elapsed().as_secs_f64());

        let t = Instant::now();
        let outputs = tracker.step(frame.index, &detections)?;
        if dumps.tracks {
            track_dumps.push(tracker.dump(frame.index));
        }
        timing.add(Stage::Tracking, t.elapsed().as_secs_f64());

        let t = Instant::now();
        let mut jobs = Vec::with_capacity(outputs.len());
        for out in &outputs {
            let lane = lane_model.as_ref().map_or(LaneId::Unknown, |m| assign_lane(&out.bbox, m));
            let track = tracker.track_mut(out.track_id).expect("stepped track exists");
            track.lane_history.push((frame.index, lane));
            let history: Vec<BBox> = track.bbox_history.iter().map(|(_, b)| b.quantized()).collect();
            let n = track.bbox_history.len();
            let prev = (n >= 2).then(|| {
                let (f, b) = track.bbox_history[n - 2];
                (b, f)
            });
            // the size rule applies to the current detection, the majority class otherwise
            let object_type = if detections[out.detection].class == ObjectType::NonDescript {
                ObjectType::NonDescript
            } else {
                track.class()
            };
            jobs.push(ObjectJob {
                track_id: out.track_id,
                bbox: out.bbox,
                object_type,
                history,
                lane,
                lane_change: detect_lane_change(&track.lanes(), motion.lane_change_window),
                prev,
                previous_heading: track.ped_direction,
                confirmed: out.status == TrackStatus::Confirmed,
            });
        }
        let results: Vec<Result<ObjectResult, PropertyError>> = pool.install(|| {
            jobs.par_iter()
                .map(|job| {
                    process_object(job, frame.index, &image, prev_image.as_ref(), &scene, cfg, &motion, backend)
                })
                .collect()
        });
        let mut records = Vec::new();
        for r in results {
            let r = r?;
            let track = tracker.track_mut(r.track_id).expect("stepped track exists");
            track.movement = Some(r.movement);
            if let Some(rec) = r.record {
                if let Some(Props::Pedestrian(p)) = rec.props {
                    track.ped_direction = Some(p.direction);
                }
                records.push(AnnotationRecord { size: rec.size.quantized(), ..rec });
            }
        }
        records.sort_by_key(|r| r.track_id);
        document.frames.push(FrameRecords { index: frame.index, records });
        prev_image = Some(image);
        timing.add(Stage::Classification, t.elapsed().as_secs_f64());
    }

    let violations = validate_document(&document);
    if !violations.is_empty() {
        return Err(PipelineError::InvalidOutput(SchemaError::Invalid(violations)));
    }
    Ok(AnnotateOutput { document, timing, lane_dumps, track_dumps })
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.display().to_string(), source })?;
    }
    fs::write(path, text).map_err(|source| PipelineError::Io { path: path.display().to_string(), source })
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items.iter().map(|i| serde_json::to_string(i).expect("dump serializes") + "\n").collect()
}

/// Where the optional dumps go, next to the output document.
pub fn dump_paths(output: &Path) -> (PathBuf, PathBuf) {
    let stem = output.file_stem().map_or("annotations".into(), |s| s.to_string_lossy().into_owned());
    (output.with_file_name(format!("{stem}.lanes.jsonl")), output.with_file_name(format!("{stem}.tracks.jsonl")))
}

/// Runs the pipeline and writes the document (and dumps, if asked).
pub fn annotate_to_disk(cfg: &PipelineConfig, dumps: DumpOptions) -> Result<AnnotateOutput, PipelineError> {
    let out = run_annotate(cfg, dumps)?;
    let text = schema::serialize(&out.document).map_err(PipelineError::InvalidOutput)?;
    write_text(&cfg.output, &text)?;
    let (lanes_path, tracks_path) = dump_paths(&cfg.output);
    if dumps.lanes {
        write_text(&lanes_path, &jsonl(&out.lane_dumps))?;
    }
    if dumps.tracks {
        write_text(&tracks_path, &jsonl(&out.track_dumps))?;
    }
    Ok(out)
}

pub fn load_document(path: &Path) -> Result<AnnotationDocument, PipelineError> {
    let text = fs::read_to_string(path)
        .map_err(|source| PipelineError::Io { path: path.display().to_string(), source })?;
    schema::parse(&text).map_err(|source| PipelineError::Document { path: path.display().to_string(), source })
}

pub fn run_evaluate(pred: &Path, gt: &Path, cfg: &EvalConfig) -> Result<MetricsReport, PipelineError> {
    Ok(evaluate(&load_document(pred)?, &load_document(gt)?, cfg))
}

/// Per-field agreement between a pipeline document and ground truth on the
/// records both contain (matched by frame and box).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Agreement {
    pub compared: usize,
    pub lane: usize,
    pub movement: usize,
    pub lane_change: usize,
    pub all_three: usize,
}

impl Agreement {
    pub fn rate(&self, hits: usize) -> f64 {
        if self.compared == 0 { 0.0 } else { hits as f64 / self.compared as f64 }
    }
}

/// Compares lane, movement and lane change of matched records.
pub fn agreement(pred: &AnnotationDocument, gt: &AnnotationDocument, iou: f64) -> Agreement {
    let mut a = Agreement::default();
    let pairs = crate::metrics::pair_records(pred, gt, iou);
    for (g, p) in pairs.pairs {
        let (Some(gp), Some(pp)) = (g.props, p.props) else { continue };
        a.compared += 1;
        let lane = gp.lane() == pp.lane();
        let movement = gp.movement() == pp.movement();
        let lane_change = gp.lane_change() == pp.lane_change();
        a.lane += lane as usize;
        a.movement += movement as usize;
        a.lane_change += lane_change as usize;
        a.all_three += (lane && movement && lane_change) as usize;
    }
    a
}
