//! Correction diffs exchanged with the review tool.
//!
//! A diff is `{"edits":[{"frame":..,"track_id":..,"field":..,"old":..,"new":..}]}`.
//! `field` is `object_type`, `size`, `props`, a property key inside `props`
//! (e.g. `occlusion`, `lane`), or `record` to add (`old` null) or remove
//! (`new` null) a whole record. Replaying a diff onto the document it was
//! recorded against must reproduce the exported document byte for byte.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::schema::{parse, AnnotationDocument, SchemaError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edit {
    pub frame: u64,
    pub track_id: u64,
    pub field: String,
    pub old: Value,
    pub new: Value,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditLog {
    pub edits: Vec<Edit>,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("edit {edit}: frame {frame} not in document")]
    MissingFrame { edit: usize, frame: u64 },
    #[error("edit {edit}: no record for track {track_id} in frame {frame}")]
    MissingRecord { edit: usize, frame: u64, track_id: u64 },
    #[error("edit {edit}: track {track_id} already present in frame {frame}")]
    DuplicateRecord { edit: usize, frame: u64, track_id: u64 },
    #[error("edit {edit}: record has no field {field:?}")]
    UnknownField { edit: usize, field: String },
    #[error("edit {edit}: field {field:?} holds {found}, diff expects {expected}")]
    Stale { edit: usize, field: String, expected: Value, found: Value },
    #[error("documents cover different frames")]
    FrameSetChanged,
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

const TOP_LEVEL: [&str; 3] = ["object_type", "size", "props"];

/// JSON equality that treats `12` and `12.0` as the same number.
fn same(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64() == y.as_f64(),
        (Value::Array(x), Value::Array(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| same(p, q))
        }
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| same(v, w)))
        }
        _ => a == b,
    }
}

fn track_of(record: &Value) -> Option<u64> {
    record.get("track_id").and_then(Value::as_u64)
}

/// The single category object inside `props`, e.g. the value of `{"vehicle": {...}}`.
fn props_inner(record: &mut Value) -> Option<&mut Map<String, Value>> {
    record.get_mut("props")?.as_object_mut()?.values_mut().next()?.as_object_mut()
}

fn check(edit: usize, field: &str, expected: &Value, found: &Value) -> Result<(), ReplayError> {
    if same(expected, found) {
        Ok(())
    } else {
        Err(ReplayError::Stale {
            edit,
            field: field.to_string(),
            expected: expected.clone(),
            found: found.clone(),
        })
    }
}

fn apply(doc: &mut Value, i: usize, e: &Edit) -> Result<(), ReplayError> {
    let frame = doc["frames"]
        .as_array_mut()
        .and_then(|fs| fs.iter_mut().find(|f| f["index"].as_u64() == Some(e.frame)))
        .ok_or(ReplayError::MissingFrame { edit: i, frame: e.frame })?;
    let records = frame["records"].as_array_mut().expect("serialized frame has records");
    let pos = records.iter().position(|r| track_of(r) == Some(e.track_id));
    let missing = ReplayError::MissingRecord { edit: i, frame: e.frame, track_id: e.track_id };

    if e.field == "record" {
        return match (pos, e.new.is_null()) {
            (None, false) if e.old.is_null() => {
                // keep records in track-id order, as the pipeline writes them
                let at = records.partition_point(|r| track_of(r) < Some(e.track_id));
                records.insert(at, e.new.clone());
                Ok(())
            }
            (Some(_), false) => Err(ReplayError::DuplicateRecord {
                edit: i,
                frame: e.frame,
                track_id: e.track_id,
            }),
            (Some(p), true) => {
                check(i, &e.field, &e.old, &records[p])?;
                records.remove(p);
                Ok(())
            }
            _ => Err(missing),
        };
    }

    let record = &mut records[pos.ok_or(missing)?];
    if TOP_LEVEL.contains(&e.field.as_str()) {
        let obj = record.as_object_mut().expect("record is an object");
        check(i, &e.field, &e.old, obj.get(&e.field).unwrap_or(&Value::Null))?;
        if e.new.is_null() {
            obj.remove(&e.field);
        } else {
            obj.insert(e.field.clone(), e.new.clone());
        }
        return Ok(());
    }
    let inner = props_inner(record)
        .filter(|p| p.contains_key(&e.field))
        .ok_or_else(|| ReplayError::UnknownField { edit: i, field: e.field.clone() })?;
    check(i, &e.field, &e.old, &inner[&e.field])?;
    inner.insert(e.field.clone(), e.new.clone());
    Ok(())
}

/// Applies `log` in order. Each edit's `old` must match the current value.
/// The result is validated only once, after the last edit, so a type change
/// may be followed by the matching `props` edit.
pub fn replay(original: &AnnotationDocument, log: &EditLog) -> Result<AnnotationDocument, ReplayError> {
    let mut value = serde_json::to_value(original).map_err(SchemaError::from)?;
    for (i, edit) in log.edits.iter().enumerate() {
        apply(&mut value, i, edit)?;
    }
    Ok(parse(&value.to_string())?)
}

fn record_map(doc: &Value) -> BTreeMap<(u64, u64), Value> {
    let mut out = BTreeMap::new();
    for frame in doc["frames"].as_array().into_iter().flatten() {
        let index = frame["index"].as_u64().unwrap_or_default();
        for r in frame["records"].as_array().into_iter().flatten() {
            out.insert((index, track_of(r).unwrap_or_default()), r.clone());
        }
    }
    out
}

fn edit(key: (u64, u64), field: &str, old: Value, new: Value) -> Edit {
    Edit { frame: key.0, track_id: key.1, field: field.to_string(), old, new }
}

/// Field-level edits turning `original` into `edited`. Both documents must
/// cover the same frames.
pub fn diff(original: &AnnotationDocument, edited: &AnnotationDocument) -> Result<EditLog, ReplayError> {
    let frames = |d: &AnnotationDocument| d.frames.iter().map(|f| f.index).collect::<Vec<_>>();
    if frames(original) != frames(edited) {
        return Err(ReplayError::FrameSetChanged);
    }
    let a = record_map(&serde_json::to_value(original).map_err(SchemaError::from)?);
    let b = record_map(&serde_json::to_value(edited).map_err(SchemaError::from)?);
    let keys: std::collections::BTreeSet<_> = a.keys().chain(b.keys()).copied().collect();

    let mut edits = Vec::new();
    for key in keys {
        let (old, new) = match (a.get(&key), b.get(&key)) {
            (Some(o), Some(n)) => (o, n),
            (o, n) => {
                let o = o.cloned().unwrap_or(Value::Null);
                let n = n.cloned().unwrap_or(Value::Null);
                edits.push(edit(key, "record", o, n));
                continue;
            }
        };
        for field in ["object_type", "size"] {
            if !same(&old[field], &new[field]) {
                edits.push(edit(key, field, old[field].clone(), new[field].clone()));
            }
        }
        let category = |r: &Value| r.get("props")?.as_object()?.keys().next().cloned();
        let (po, pn) = (old.get("props"), new.get("props"));
        if category(old).is_some() && category(old) == category(new) {
            let (po, pn) = (po.unwrap(), pn.unwrap());
            let cat = category(old).unwrap();
            for (field, v) in pn[&cat].as_object().into_iter().flatten() {
                if !same(&po[&cat][field], v) {
                    edits.push(edit(key, field, po[&cat][field].clone(), v.clone()));
                }
            }
        } else if po != pn {
            let o = po.cloned().unwrap_or(Value::Null);
            let n = pn.cloned().unwrap_or(Value::Null);
            edits.push(edit(key, "props", o, n));
        }
    }
    Ok(EditLog { edits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{serialize, AnnotationRecord, BBox, FrameRecords};
    use serde_json::json;

    fn doc() -> AnnotationDocument {
        let text = r#"{"schema_version":"1.0","sequence_id":"s","frames":[{"index":0,"records":[
            {"frame_index":0,"track_id":1,"object_type":"car","size":{"minx":10.0,"miny":10.0,"maxx":60.0,"maxy":50.0},
             "props":{"vehicle":{"occlusion":"none","bottom_occlusion":false,"direction":"preceding","movement":"moving",
             "lane":"0","lane_change":false,"rotation":"relevant","pose":"rear","lighting":"normal"}}},
            {"frame_index":0,"track_id":4,"object_type":"non-descript","size":{"minx":1.0,"miny":1.0,"maxx":9.0,"maxy":9.0}}]}]}"#;
        parse(text).unwrap()
    }

    fn one(field: &str, old: Value, new: Value) -> EditLog {
        EditLog { edits: vec![edit((0, 1), field, old, new)] }
    }

    #[test]
    fn empty_log_is_identity() {
        let d = doc();
        assert_eq!(serialize(&replay(&d, &EditLog::default()).unwrap()).unwrap(), serialize(&d).unwrap());
        assert!(diff(&d, &d).unwrap().edits.is_empty());
    }

    #[test]
    fn property_edit_replays() {
        let d = doc();
        let out = replay(&d, &one("occlusion", json!("none"), json!("partial"))).unwrap();
        let expect = serialize(&d).unwrap().replace(r#""occlusion":"none""#, r#""occlusion":"partial""#);
        assert_eq!(serialize(&out).unwrap(), expect);
        assert_eq!(diff(&d, &out).unwrap(), one("occlusion", json!("none"), json!("partial")));
    }

    #[test]
    fn stale_old_value_is_rejected() {
        let err = replay(&doc(), &one("lane", json!("+1"), json!("-1"))).unwrap_err();
        assert!(matches!(err, ReplayError::Stale { edit: 0, .. }));
    }

    #[test]
    fn out_of_vocabulary_value_fails_validation() {
        let err = replay(&doc(), &one("lane", json!("0"), json!("3"))).unwrap_err();
        assert!(matches!(err, ReplayError::Schema(_)));
    }

    #[test]
    fn unknown_field_and_missing_record() {
        assert!(matches!(
            replay(&doc(), &one("height", json!("adult"), json!("child"))),
            Err(ReplayError::UnknownField { .. })
        ));
        let log = EditLog { edits: vec![edit((0, 9), "size", Value::Null, Value::Null)] };
        assert!(matches!(replay(&doc(), &log), Err(ReplayError::MissingRecord { track_id: 9, .. })));
    }

    #[test]
    fn integer_and_float_coordinates_compare_equal() {
        let log = one(
            "size",
            json!({"minx": 10, "miny": 10, "maxx": 60, "maxy": 50}),
            json!({"minx": 12.5, "miny": 10, "maxx": 60, "maxy": 50}),
        );
        let out = replay(&doc(), &log).unwrap();
        assert_eq!(out.frames[0].records[0].size, BBox::new(12.5, 10.0, 60.0, 50.0));
    }

    #[test]
    fn added_record_lands_in_track_order() {
        let d = doc();
        let mut edited = d.clone();
        edited.frames[0].records.insert(1, AnnotationRecord::non_descript(0, 2, BBox::new(0.0, 0.0, 5.0, 5.0)));
        let log = diff(&d, &edited).unwrap();
        assert_eq!(log.edits.len(), 1);
        assert_eq!(log.edits[0].field, "record");
        assert_eq!(serialize(&replay(&d, &log).unwrap()).unwrap(), serialize(&edited).unwrap());
    }

    #[test]
    fn type_change_with_props_replays_after_both_edits() {
        let d = doc();
        let mut edited = d.clone();
        edited.frames[0].records[0] = AnnotationRecord::non_descript(0, 1, d.frames[0].records[0].size);
        let log = diff(&d, &edited).unwrap();
        let fields: Vec<&str> = log.edits.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(fields, ["object_type", "props"]);
        assert_eq!(replay(&d, &log).unwrap(), edited);
    }

    #[test]
    fn diff_requires_same_frames() {
        let mut other = doc();
        other.frames.push(FrameRecords { index: 1, records: vec![] });
        assert!(matches!(diff(&doc(), &other), Err(ReplayError::FrameSetChanged)));
    }

    #[test]
    fn wire_format() {
        let log: EditLog = serde_json::from_str(
            r#"{"edits":[{"frame":0,"track_id":1,"field":"movement","old":"moving","new":"parked"}]}"#,
        )
        .unwrap();
        assert_eq!(log.edits[0].new, json!("parked"));
        assert!(serde_json::from_str::<EditLog>(r#"{"edits":[{"frame":0}]}"#).is_err());
    }
}
