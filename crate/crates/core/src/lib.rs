//! Automatic annotation of driving-scene video.
//!
//! Turns per-frame detections, lane-instance masks and grayscale frames into
//! annotation records (object type, track id, lane, movement, lane change and
//! per-category properties), and evaluates annotations against ground truth.

pub mod ingest;
pub mod lanes;
pub mod metrics;
pub mod motion;
pub mod pipeline;
pub mod properties;
pub mod review;
pub mod schema;
pub mod synth;
pub mod tracker;

pub use lanes::{assign_lane, build_lane_model, LaneModel, Line};
pub use metrics::{evaluate, EvalConfig, MetricsReport};
pub use pipeline::{run_annotate, run_evaluate, PipelineConfig, PipelineError};
pub use review::{replay, Edit, EditLog};
pub use schema::{
    AnnotationDocument, AnnotationRecord, BBox, Category, LaneId, Movement, ObjectType, Props,
};
pub use synth::{run_synth, SynthConfig};
