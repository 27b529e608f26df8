//! Domain types shared by every other module: segments, detections, label
//! spaces and the two collection types (ground truth and predictions).
//!
//! Times are seconds stored as `f64`. Segments are treated as half-open
//! `[start, end)`; overlap is measured on lengths, so segments that only touch
//! at an endpoint have tIoU 0.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::error::{Error, Result};

/// A single invariant violation found while checking a value.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite,
    NegativeStart,
    ZeroDuration,
    StartAfterEnd,
    ScoreOutOfRange(f64),
    UnknownLabel(usize),
    EmptyVideoId,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite => write!(f, "non-finite segment boundary"),
            Violation::NegativeStart => write!(f, "negative segment start"),
            Violation::ZeroDuration => write!(f, "zero-duration segment"),
            Violation::StartAfterEnd => write!(f, "start ≥ end"),
            Violation::ScoreOutOfRange(s) => write!(f, "score out of range ({s})"),
            Violation::UnknownLabel(id) => write!(f, "unknown label (id {id})"),
            Violation::EmptyVideoId => write!(f, "empty video id"),
        }
    }
}

/// A time interval in seconds.
///
/// Fields are public so that unchecked values can be represented and then
/// rejected by [`validate_detection`]; [`Segment::new`] is the checked
/// constructor and every loader goes through it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn new(start: f64, end: f64) -> Result<Self, Violation> {
        let segment = Segment { start, end };
        segment.check()?;
        Ok(segment)
    }

    pub fn check(&self) -> Result<(), Violation> {
        if !self.start.is_finite() || !self.end.is_finite() {
            return Err(Violation::NonFinite);
        }
        if self.start < 0.0 {
            return Err(Violation::NegativeStart);
        }
        match self.start.partial_cmp(&self.end) {
            Some(Ordering::Less) => Ok(()),
            Some(Ordering::Equal) => Err(Violation::ZeroDuration),
            _ => Err(Violation::StartAfterEnd),
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn intersection(&self, other: &Segment) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }
}

/// Temporal intersection over union of two segments.
///
/// Symmetric, exactly 1 for identical segments and 0 for disjoint or touching
/// ones.
pub fn tiou(a: &Segment, b: &Segment) -> f64 {
    let inter = a.intersection(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = (a.duration() + b.duration()) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// A scored, labelled segment produced by one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub video_id: String,
    pub label_id: usize,
    pub segment: Segment,
    pub score: f64,
    /// Index of the producing model in a fusion's input list.
    pub source_model: usize,
}

impl Detection {
    /// Storage order inside one video: by start, end, label, then
    /// descending score and source model.
    pub(crate) fn storage_cmp(&self, other: &Detection) -> Ordering {
        self.segment
            .start
            .total_cmp(&other.segment.start)
            .then(self.segment.end.total_cmp(&other.segment.end))
            .then(self.label_id.cmp(&other.label_id))
            .then(other.score.total_cmp(&self.score))
            .then(self.source_model.cmp(&other.source_model))
    }
}

/// Returns the first invariant `d` violates with respect to `space`.
pub fn validate_detection(d: &Detection, space: &LabelSpace) -> Result<(), Violation> {
    if d.video_id.is_empty() {
        return Err(Violation::EmptyVideoId);
    }
    if !(0.0..=1.0).contains(&d.score) {
        return Err(Violation::ScoreOutOfRange(d.score));
    }
    if d.label_id >= space.len() {
        return Err(Violation::UnknownLabel(d.label_id));
    }
    d.segment.check()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthInstance {
    pub video_id: String,
    pub label_id: usize,
    pub segment: Segment,
}

/// Trim plus Unicode case folding; the single rule used for every label
/// name comparison.
pub fn canonicalize_label(name: &str) -> String {
    caseless::default_case_fold_str(name.trim())
}

/// Ordered, duplicate-free list of label names with dense indices.
#[derive(Debug, Clone)]
pub struct LabelSpace {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for LabelSpace {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names
    }
}

impl LabelSpace {
    /// Builds a label space; names are trimmed and must be unique after
    /// canonicalization.
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut space = LabelSpace {
            names: Vec::new(),
            index: HashMap::new(),
        };
        for name in names {
            let name = name.as_ref().trim();
            if name.is_empty() {
                return Err(Error::invariant("labels", "empty label name"));
            }
            let key = canonicalize_label(name);
            if space.index.contains_key(&key) {
                return Err(Error::invariant(
                    "labels",
                    format!("duplicate label {name:?} after canonicalization"),
                ));
            }
            space.index.insert(key, space.names.len());
            space.names.push(name.to_string());
        }
        Ok(space)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    /// Looks a name up by its canonical form.
    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.index.get(&canonicalize_label(name)).copied()
    }
}

/// Annotations of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoAnnotations {
    pub duration: f64,
    pub instances: Vec<GroundTruthInstance>,
}

/// The evaluation reference: labelled segments per video plus the label
/// space they index into.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSet {
    label_space: LabelSpace,
    videos: BTreeMap<String, VideoAnnotations>,
}

impl GroundTruthSet {
    /// Validates every instance. Instances are kept in storage order
    /// (start, end, label) so that equal sets compare equal.
    pub fn new(
        label_space: LabelSpace,
        mut videos: BTreeMap<String, VideoAnnotations>,
    ) -> Result<Self> {
        for (video_id, video) in videos.iter_mut() {
            if video_id.is_empty() {
                return Err(Error::invariant("videos", "empty video id"));
            }
            if !(video.duration.is_finite() && video.duration > 0.0) {
                return Err(Error::invariant(
                    format!("video {video_id:?}"),
                    format!(
                        "duration must be positive and finite, got {}",
                        video.duration
                    ),
                ));
            }
            for (i, inst) in video.instances.iter().enumerate() {
                let context = || format!("video {video_id:?}, annotation {i}");
                if inst.video_id != *video_id {
                    return Err(Error::invariant(
                        context(),
                        "instance filed under a different video",
                    ));
                }
                inst.segment
                    .check()
                    .map_err(|v| Error::invariant(context(), v.to_string()))?;
                if inst.segment.end > video.duration {
                    return Err(Error::invariant(
                        context(),
                        format!(
                            "segment ends at {} beyond duration {}",
                            inst.segment.end, video.duration
                        ),
                    ));
                }
                if inst.label_id >= label_space.len() {
                    return Err(Error::invariant(context(), "unknown label"));
                }
            }
            video.instances.sort_by(|a, b| {
                a.segment
                    .start
                    .total_cmp(&b.segment.start)
                    .then(a.segment.end.total_cmp(&b.segment.end))
                    .then(a.label_id.cmp(&b.label_id))
            });
        }
        Ok(GroundTruthSet {
            label_space,
            videos,
        })
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn videos(&self) -> &BTreeMap<String, VideoAnnotations> {
        &self.videos
    }

    pub fn instances(&self) -> impl Iterator<Item = &GroundTruthInstance> {
        self.videos.values().flat_map(|v| v.instances.iter())
    }

    pub fn num_instances(&self) -> usize {
        self.videos.values().map(|v| v.instances.len()).sum()
    }
}

/// One model's detections over a collection of videos.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub model_name: String,
    pub model_weight: f64,
    pub results: BTreeMap<String, Vec<Detection>>,
}

impl PredictionSet {
    pub fn new(model_name: impl Into<String>, model_weight: f64) -> Result<Self> {
        if !(model_weight.is_finite() && model_weight > 0.0) {
            return Err(Error::invariant(
                "model weight",
                format!("must be positive, got {model_weight}"),
            ));
        }
        Ok(PredictionSet {
            model_name: model_name.into(),
            model_weight,
            results: BTreeMap::new(),
        })
    }

    /// Appends a detection under its own video id.
    pub fn push(&mut self, detection: Detection) {
        self.results
            .entry(detection.video_id.clone())
            .or_default()
            .push(detection);
    }

    pub fn detections(&self) -> impl Iterator<Item = &Detection> {
        self.results.values().flatten()
    }

    pub fn num_detections(&self) -> usize {
        self.results.values().map(Vec::len).sum()
    }

    /// Checks every detection against `space` and the weight invariant.
    pub fn validate(&self, space: &LabelSpace) -> Result<()> {
        if !(self.model_weight.is_finite() && self.model_weight > 0.0) {
            return Err(Error::invariant(
                format!("model {:?}", self.model_name),
                format!("weight must be positive, got {}", self.model_weight),
            ));
        }
        for (video_id, dets) in &self.results {
            for (i, d) in dets.iter().enumerate() {
                let context = || format!("video {video_id:?}, detection {i}");
                if d.video_id != *video_id {
                    return Err(Error::invariant(
                        context(),
                        "detection filed under a different video",
                    ));
                }
                validate_detection(d, space)
                    .map_err(|v| Error::invariant(context(), v.to_string()))?;
            }
        }
        Ok(())
    }

    /// Sorts detections of every video into storage order. Videos with an
    /// empty list are kept.
    pub fn normalize(&mut self) {
        for dets in self.results.values_mut() {
            dets.sort_by(Detection::storage_cmp);
        }
    }
}
