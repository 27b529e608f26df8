//! Reading and writing ground-truth and prediction files, plus cross-dataset
//! label mapping and merging.
//!
//! Ground truth:
//! `{"version":"1.0","labels":[..],"videos":{"<id>":{"duration":d,"annotations":[{"label":..,"segment":[s,e]}]}}}`
//!
//! Predictions:
//! `{"version":"1.0","model":"<name>","weight":w,"results":{"<id>":[{"label":..,"segment":[s,e],"score":p}]}}`
//!
//! Saved files are canonical (see [`canonical`]), so saving two equal sets
//! gives identical bytes.

pub mod canonical;
mod merge;

use std::collections::BTreeMap;

use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::domain::{
    canonicalize_label, Detection, GroundTruthInstance, GroundTruthSet, LabelSpace, PredictionSet,
    Segment, VideoAnnotations,
};
use crate::error::{Error, Result};

pub use canonical::{format_decimal, to_canonical_json};
pub use merge::{
    build_label_mapping, merge_datasets, LabelMapping, MappingEntry, MergeReport, Provenance,
};

pub const FORMAT_VERSION: &str = "1.0";

#[derive(Deserialize)]
struct RawGroundTruth {
    version: String,
    labels: Vec<String>,
    videos: BTreeMap<String, RawVideo>,
}

#[derive(Deserialize)]
struct RawVideo {
    duration: f64,
    annotations: Vec<RawAnnotation>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    label: String,
    segment: [f64; 2],
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Deserialize)]
struct RawPredictions {
    version: String,
    model: String,
    #[serde(default = "default_weight")]
    weight: f64,
    results: BTreeMap<String, Vec<RawDetection>>,
}

#[derive(Deserialize)]
struct RawDetection {
    label: String,
    segment: [f64; 2],
    score: f64,
}

fn check_version(version: &str) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(Error::SchemaViolation(format!(
            "unsupported version {version:?}, expected {FORMAT_VERSION:?}"
        )));
    }
    Ok(())
}

fn parse_utf8(bytes: &[u8]) -> Result<&str> {
    std::str::from_utf8(bytes).map_err(|e| Error::MalformedJson {
        line: 0,
        column: 0,
        message: format!("input is not UTF-8: {e}"),
    })
}

/// Parses and validates a ground-truth file.
pub fn load_ground_truth(bytes: &[u8]) -> Result<GroundTruthSet> {
    let raw: RawGroundTruth = serde_json::from_str(parse_utf8(bytes)?)?;
    check_version(&raw.version)?;
    let space = LabelSpace::new(&raw.labels)?;

    let mut videos = BTreeMap::new();
    for (video_id, video) in raw.videos {
        let mut instances = Vec::with_capacity(video.annotations.len());
        for (i, ann) in video.annotations.into_iter().enumerate() {
            let context = || format!("video {video_id:?}, annotation {i}");
            let label_id = space.id_of(&ann.label).ok_or_else(|| {
                Error::invariant(context(), format!("unknown label {:?}", ann.label))
            })?;
            let segment = Segment::new(ann.segment[0], ann.segment[1])
                .map_err(|v| Error::invariant(context(), v.to_string()))?;
            instances.push(GroundTruthInstance {
                video_id: video_id.clone(),
                label_id,
                segment,
            });
        }
        videos.insert(
            video_id,
            VideoAnnotations {
                duration: video.duration,
                instances,
            },
        );
    }
    GroundTruthSet::new(space, videos)
}

/// Parses and validates a prediction file, resolving labels in `space`.
pub fn load_predictions(bytes: &[u8], space: &LabelSpace) -> Result<PredictionSet> {
    let raw: RawPredictions = serde_json::from_str(parse_utf8(bytes)?)?;
    check_version(&raw.version)?;
    let mut set = PredictionSet::new(raw.model, raw.weight)?;
    for (video_id, dets) in raw.results {
        if video_id.is_empty() {
            return Err(Error::invariant("results", "empty video id"));
        }
        let mut out = Vec::with_capacity(dets.len());
        for (i, d) in dets.into_iter().enumerate() {
            let context = || format!("video {video_id:?}, detection {i}");
            let label_id = space.id_of(&d.label).ok_or_else(|| {
                Error::invariant(context(), format!("unknown label {:?}", d.label))
            })?;
            let segment = Segment::new(d.segment[0], d.segment[1])
                .map_err(|v| Error::invariant(context(), v.to_string()))?;
            if !(0.0..=1.0).contains(&d.score) {
                return Err(Error::invariant(
                    context(),
                    format!("score out of range ({})", d.score),
                ));
            }
            out.push(Detection {
                video_id: video_id.clone(),
                label_id,
                segment,
                score: d.score,
                source_model: 0,
            });
        }
        set.results.insert(video_id, out);
    }
    set.normalize();
    Ok(set)
}

/// Label names used by a prediction file, in first-seen order. Used to build
/// a label space when no ground truth is at hand.
pub fn prediction_labels(bytes: &[u8]) -> Result<Vec<String>> {
    let raw: RawPredictions = serde_json::from_str(parse_utf8(bytes)?)?;
    check_version(&raw.version)?;
    let mut labels: Vec<String> = Vec::new();
    for d in raw.results.values().flatten() {
        if !labels
            .iter()
            .any(|l| canonicalize_label(l) == canonicalize_label(&d.label))
        {
            labels.push(d.label.trim().to_string());
        }
    }
    Ok(labels)
}

/// Parses a label-override file: a JSON object of `"source": "target"`.
pub fn load_label_overrides(bytes: &[u8]) -> Result<BTreeMap<String, String>> {
    Ok(serde_json::from_str(parse_utf8(bytes)?)?)
}

fn segment_value(s: &Segment) -> Value {
    json!([s.start, s.end])
}

/// Canonical serialization of a prediction set. Label ids are written as
/// names from `space`.
pub fn save_predictions(p: &PredictionSet, space: &LabelSpace) -> Result<Vec<u8>> {
    let mut results = Map::new();
    for (video_id, dets) in &p.results {
        let mut dets: Vec<&Detection> = dets.iter().collect();
        dets.sort_by(|a, b| a.storage_cmp(b));
        let items = dets
            .into_iter()
            .map(|d| {
                let label = space.name(d.label_id).ok_or(Error::UnknownLabel {
                    label_id: d.label_id,
                    count: space.len(),
                })?;
                Ok(json!({"label": label, "segment": segment_value(&d.segment), "score": d.score}))
            })
            .collect::<Result<Vec<Value>>>()?;
        results.insert(video_id.clone(), Value::Array(items));
    }
    let doc = json!({
        "version": FORMAT_VERSION,
        "model": p.model_name,
        "weight": p.model_weight,
        "results": results,
    });
    Ok(canonical::canonical_string(&doc).into_bytes())
}

/// Canonical serialization of a ground-truth set.
pub fn save_ground_truth(g: &GroundTruthSet) -> Vec<u8> {
    let space = g.label_space();
    let mut videos = Map::new();
    for (video_id, video) in g.videos() {
        let annotations: Vec<Value> = video
            .instances
            .iter()
            .map(|inst| {
                json!({
                    "label": space.name(inst.label_id).unwrap_or_default(),
                    "segment": segment_value(&inst.segment),
                })
            })
            .collect();
        videos.insert(
            video_id.clone(),
            json!({"duration": video.duration, "annotations": annotations}),
        );
    }
    let doc = json!({
        "version": FORMAT_VERSION,
        "labels": space.names(),
        "videos": videos,
    });
    canonical::canonical_string(&doc).into_bytes()
}
