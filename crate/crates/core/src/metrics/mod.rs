//! Detection, lane, property and tracking evaluation.

mod ap;
mod mot;
mod timing;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::schema::{AnnotationDocument, AnnotationRecord, BBox, ObjectType, Property};
use crate::tracker::hungarian;

pub use ap::{
    average_precision, envelope_area, greedy_match, pr_curve, GtBox, Interpolation, PRPoint,
    ScoredBox,
};
pub use mot::{mot_metrics, MotCounts, MotFrame, MotSummary, MOSTLY_LOST, MOSTLY_TRACKED};
pub use timing::{timing_report, Stage, TimeUnit, TimingReport, TimingTable};

pub const DEFAULT_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no defined values to average")]
    Empty,
    #[error("label lists differ in length ({pred} predicted, {gt} ground truth)")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("timing table is missing stage {0}")]
    MissingStage(&'static str),
    #[error("timing table has a negative duration for stage {0}")]
    NegativeDuration(&'static str),
    #[error("{correct} correct out of {total}")]
    BadCounts { correct: usize, total: usize },
}

/// Unweighted mean of the defined values.
pub fn mean_defined(values: &[Option<f64>]) -> Result<f64, MetricsError> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Mean AP over classes; classes with undefined AP are excluded.
pub fn mean_ap(per_class_ap: &[Option<f64>]) -> Result<f64, MetricsError> {
    mean_defined(per_class_ap)
}

/// Rounds a percentage for reporting.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Maximum-cardinality, minimum `1 - IoU` matching of `a` to `b`, keeping
/// only pairs with IoU at least `iou_threshold`. Returns `(i, j, iou)`.
pub fn match_boxes(a: &[BBox], b: &[BBox], iou_threshold: f64) -> Vec<(usize, usize, f64)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    // gated pairs cost more than any full set of admissible ones
    let forbidden = 1e6;
    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|x| {
            b.iter()
                .map(|y| {
                    let iou = x.iou(y);
                    if iou >= iou_threshold { 1.0 - iou } else { forbidden }
                })
                .collect()
        })
        .collect();
    hungarian(&cost)
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| {
            let j = j?;
            let iou = a[i].iou(&b[j]);
            (iou >= iou_threshold).then_some((i, j, iou))
        })
        .collect()
}

/// Per-class detection accuracy: the share of ground-truth boxes matched
/// by a same-class prediction at the IoU threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAccuracy {
    pub per_class: BTreeMap<ObjectType, Option<f64>>,
    pub mean: Option<f64>,
}

/// `(frame, class, box)` triples.
pub type LabeledBox = (u64, ObjectType, BBox);

pub fn detection_accuracy(
    preds: &[LabeledBox],
    gts: &[LabeledBox],
    iou_threshold: f64,
) -> ClassAccuracy {
    let mut per_class = BTreeMap::new();
    for &class in ObjectType::detector_classes() {
        let mut frames: BTreeMap<u64, (Vec<BBox>, Vec<BBox>)> = BTreeMap::new();
        for &(f, c, b) in gts {
            if c == class {
                frames.entry(f).or_default().0.push(b);
            }
        }
        for &(f, c, b) in preds {
            if c == class {
                if let Some(e) = frames.get_mut(&f) {
                    e.1.push(b);
                }
            }
        }
        let total: usize = frames.values().map(|(g, _)| g.len()).sum();
        let matched: usize =
            frames.values().map(|(g, p)| match_boxes(g, p, iou_threshold).len()).sum();
        per_class.insert(class, (total > 0).then(|| 100.0 * matched as f64 / total as f64));
    }
    let mean = mean_defined(&per_class.values().copied().collect::<Vec<_>>()).ok();
    ClassAccuracy { per_class, mean }
}

/// Percentage of exact label matches between aligned lists.
pub fn classification_accuracy<T: PartialEq>(pred: &[T], gt: &[T]) -> Result<Option<f64>, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch { pred: pred.len(), gt: gt.len() });
    }
    if gt.is_empty() {
        return Ok(None);
    }
    let hits = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    Ok(Some(100.0 * hits as f64 / gt.len() as f64))
}

pub fn lane_accuracy_from_counts(correct: usize, total: usize) -> Result<Option<f64>, MetricsError> {
    if correct > total {
        return Err(MetricsError::BadCounts { correct, total });
    }
    Ok((total > 0).then(|| 100.0 * correct as f64 / total as f64))
}

/// Ground-truth records paired with predicted records in the same frame.
#[derive(Debug, Default)]
pub struct RecordPairs<'a> {
    pub pairs: Vec<(&'a AnnotationRecord, &'a AnnotationRecord)>,
    pub unmatched_gt: Vec<&'a AnnotationRecord>,
}

/// Class-agnostic per-frame box matching of two documents.
pub fn pair_records<'a>(
    pred: &'a AnnotationDocument,
    gt: &'a AnnotationDocument,
    iou_threshold: f64,
) -> RecordPairs<'a> {
    let mut out = RecordPairs::default();
    for frame in &gt.frames {
        let preds: Vec<&AnnotationRecord> =
            pred.frame(frame.index).map_or(Vec::new(), |f| f.records.iter().collect());
        let gb: Vec<BBox> = frame.records.iter().map(|r| r.size).collect();
        let pb: Vec<BBox> = preds.iter().map(|r| r.size).collect();
        let mut matched = vec![false; gb.len()];
        for (i, j, _) in match_boxes(&gb, &pb, iou_threshold) {
            matched[i] = true;
            out.pairs.push((&frame.records[i], preds[j]));
        }
        out.unmatched_gt
            .extend(frame.records.iter().zip(&matched).filter(|(_, m)| !**m).map(|(r, _)| r));
    }
    out
}

/// Share of ground-truth objects carrying a lane whose matched prediction
/// has the same lane. Undetected objects count as wrong.
pub fn lane_accuracy(
    pred: &AnnotationDocument,
    gt: &AnnotationDocument,
    iou_threshold: f64,
) -> Option<f64> {
    let total = gt.records().filter(|r| r.props.and_then(|p| p.lane()).is_some()).count();
    let correct = pair_records(pred, gt, iou_threshold)
        .pairs
        .iter()
        .filter(|(g, p)| {
            let gl = g.props.and_then(|x| x.lane());
            gl.is_some() && gl == p.props.and_then(|x| x.lane())
        })
        .count();
    lane_accuracy_from_counts(correct, total).expect("correct never exceeds total")
}

fn mot_frames(pred: &AnnotationDocument, gt: &AnnotationDocument) -> Vec<MotFrame> {
    let mut frames: BTreeMap<u64, MotFrame> = BTreeMap::new();
    for r in gt.records() {
        frames.entry(r.frame_index).or_default().gt.push((r.track_id, r.size));
    }
    for r in pred.records() {
        frames.entry(r.frame_index).or_default().pred.push((r.track_id, r.size));
    }
    frames.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub interpolation: Interpolation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { iou_threshold: DEFAULT_IOU, interpolation: Interpolation::AllPoint }
    }
}

/// Everything `evaluate` reports. Percentages are rounded to 2 decimals;
/// undefined values are `null` in JSON and `n/a` in the table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub map: Option<f64>,
    pub per_class_ap: BTreeMap<ObjectType, Option<f64>>,
    pub per_class_accuracy: BTreeMap<ObjectType, Option<f64>>,
    pub mean_accuracy: Option<f64>,
    pub lane_accuracy: Option<f64>,
    pub movement_accuracy: Option<f64>,
    pub lane_change_accuracy: Option<f64>,
    pub property_accuracy: BTreeMap<Property, Option<f64>>,
    pub mota: Option<f64>,
    pub motp: Option<f64>,
    pub mt: Option<f64>,
    pub ml: Option<f64>,
    pub mot_counts: MotCounts,
}

fn labeled(doc: &AnnotationDocument) -> Vec<LabeledBox> {
    doc.records().map(|r| (r.frame_index, r.object_type, r.size)).collect()
}

fn paired_accuracy<T: PartialEq>(
    pairs: &[(&AnnotationRecord, &AnnotationRecord)],
    get: impl Fn(&AnnotationRecord) -> Option<T>,
) -> Option<f64> {
    let (mut gt, mut pred) = (Vec::new(), Vec::new());
    for (g, p) in pairs {
        if let Some(gv) = get(g) {
            gt.push(Some(gv));
            pred.push(get(p));
        }
    }
    classification_accuracy(&pred, &gt).expect("lists are built in step")
}

/// Compares a predicted document with ground truth. Documents carry no
/// confidence, so every prediction gets the same score and AP reduces to
/// precision times recall at one threshold.
pub fn evaluate(pred: &AnnotationDocument, gt: &AnnotationDocument, cfg: &EvalConfig) -> MetricsReport {
    let mut per_class_ap = BTreeMap::new();
    for &class in ObjectType::detector_classes() {
        let preds: Vec<ScoredBox> = pred
            .records()
            .filter(|r| r.object_type == class)
            .map(|r| ScoredBox { frame: r.frame_index, bbox: r.size, score: 1.0 })
            .collect();
        let gts: Vec<GtBox> = gt
            .records()
            .filter(|r| r.object_type == class)
            .map(|r| GtBox { frame: r.frame_index, bbox: r.size })
            .collect();
        per_class_ap
            .insert(class, average_precision(&preds, &gts, cfg.iou_threshold, cfg.interpolation));
    }
    let map = mean_ap(&per_class_ap.values().copied().collect::<Vec<_>>()).ok();
    let acc = detection_accuracy(&labeled(pred), &labeled(gt), cfg.iou_threshold);

    let paired = pair_records(pred, gt, cfg.iou_threshold);
    let mut property_accuracy = BTreeMap::new();
    for &p in Property::ALL {
        let v = paired_accuracy(&paired.pairs, |r| r.props.and_then(|x| x.property(p)));
        property_accuracy.insert(p, v.map(round2));
    }
    let movement = paired_accuracy(&paired.pairs, |r| r.props.map(|x| x.movement()));
    let lane_change = paired_accuracy(&paired.pairs, |r| r.props.and_then(|x| x.lane_change()));
    let mot = mot_metrics(&mot_frames(pred, gt), cfg.iou_threshold);

    let r = |m: BTreeMap<ObjectType, Option<f64>>| m.into_iter().map(|(k, v)| (k, v.map(round2))).collect();
    MetricsReport {
        map: map.map(round2),
        per_class_ap: r(per_class_ap),
        per_class_accuracy: r(acc.per_class),
        mean_accuracy: acc.mean.map(round2),
        lane_accuracy: lane_accuracy(pred, gt, cfg.iou_threshold).map(round2),
        movement_accuracy: movement.map(round2),
        lane_change_accuracy: lane_change.map(round2),
        property_accuracy,
        mota: mot.mota.map(round2),
        motp: mot.motp.map(round2),
        mt: mot.mostly_tracked.map(round2),
        ml: mot.mostly_lost.map(round2),
        mot_counts: mot.counts,
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20}{:>10}{:>12}", "class", "AP", "accuracy")?;
        for (class, ap) in &self.per_class_ap {
            let acc = self.per_class_accuracy.get(class).copied().flatten();
            writeln!(f, "{:<20}{:>10}{:>12}", class.as_str(), cell(*ap), cell(acc))?;
        }
        writeln!(f, "{:<20}{:>10}{:>12}", "mean", cell(self.map), cell(self.mean_accuracy))?;
        writeln!(f)?;
        writeln!(f, "{:<20}{:>10}", "lane", cell(self.lane_accuracy))?;
        writeln!(f, "{:<20}{:>10}", "movement", cell(self.movement_accuracy))?;
        writeln!(f, "{:<20}{:>10}", "lane_change", cell(self.lane_change_accuracy))?;
        for (p, v) in &self.property_accuracy {
            writeln!(f, "{:<20}{:>10}", p.as_str(), cell(*v))?;
        }
        writeln!(f)?;
        writeln!(f, "{:<20}{:>10}", "MOTA", cell(self.mota))?;
        writeln!(f, "{:<20}{:>10}", "MOTP", cell(self.motp))?;
        writeln!(f, "{:<20}{:>10}", "MT", cell(self.mt))?;
        writeln!(f, "{:<20}{:>10}", "ML", cell(self.ml))?;
        let c = &self.mot_counts;
        writeln!(
            f,
            "{:<20}{:>10}",
            "FN/FP/IDSW",
            format!("{}/{}/{}", c.false_negatives, c.false_positives, c.idsw)
        )
    }
}
