//! Class-averaged mean average precision over a set of tIoU thresholds.
//!
//! Detections are ranked globally per class by descending score (ties by
//! video id, start, end) and greedily matched to the unmatched ground-truth
//! instance of highest tIoU in the same video. AP is the all-points
//! interpolated area under the precision/recall curve. Classes without
//! ground truth are excluded from every mean.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasetio::format_decimal;
use crate::domain::{tiou, Detection, GroundTruthInstance, GroundTruthSet, PredictionSet};
use crate::error::{Error, Result};

/// What to do with detections for videos missing from the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownVideoPolicy {
    #[default]
    Error,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tiou_thresholds: Vec<f64>,
    pub max_detections_per_video: Option<usize>,
    pub min_score: f64,
    pub unknown_video: UnknownVideoPolicy,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tiou_thresholds: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            max_detections_per_video: None,
            min_score: 0.0,
            unknown_video: UnknownVideoPolicy::Error,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tiou_thresholds.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one tIoU threshold is required".into(),
            ));
        }
        if let Some(t) = self
            .tiou_thresholds
            .iter()
            .find(|t| !(**t > 0.0 && **t <= 1.0))
        {
            return Err(Error::InvalidConfig(format!(
                "tIoU threshold {t} is outside (0, 1]"
            )));
        }
        if self.tiou_thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "tIoU thresholds must be strictly increasing".into(),
            ));
        }
        if self.max_detections_per_video == Some(0) {
            return Err(Error::InvalidConfig(
                "max_detections_per_video must be positive".into(),
            ));
        }
        if !self.min_score.is_finite() {
            return Err(Error::InvalidConfig("min_score must be finite".into()));
        }
        Ok(())
    }
}

/// Per-class results of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassResult {
    pub label_id: usize,
    pub label: String,
    pub num_gt: usize,
    pub num_detections: usize,
    /// AP per threshold, aligned with [`EvalReport::thresholds`]; `None`
    /// for classes without ground truth, which are excluded from the means.
    pub ap: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub classes: Vec<ClassResult>,
    pub map_per_threshold: Vec<f64>,
    pub avg_map: f64,
    /// Detections removed by `min_score`, truncation or the unknown-video
    /// policy.
    pub dropped_detections: usize,
}

impl EvalReport {
    /// AP of `label_id` at the threshold with index `threshold_index`.
    pub fn ap(&self, label_id: usize, threshold_index: usize) -> Option<f64> {
        self.classes
            .get(label_id)?
            .ap
            .as_ref()
            .and_then(|aps| aps.get(threshold_index).copied())
    }

    pub fn evaluated_classes(&self) -> impl Iterator<Item = &ClassResult> {
        self.classes.iter().filter(|c| c.ap.is_some())
    }
}

/// Global ranking order: descending score, then video, start, end.
pub(crate) fn ranking_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.video_id.cmp(&b.video_id))
        .then(a.segment.start.total_cmp(&b.segment.start))
        .then(a.segment.end.total_cmp(&b.segment.end))
        .then(a.label_id.cmp(&b.label_id))
        .then(a.source_model.cmp(&b.source_model))
}

/// Output of [`match_detections`]: detections in ranking order with their
/// TP flag, and the number of ground-truth instances.
#[derive(Debug, Clone)]
pub struct Matching<'a> {
    pub ranked: Vec<(&'a Detection, bool)>,
    pub num_gt: usize,
}

impl Matching<'_> {
    pub fn flags(&self) -> Vec<bool> {
        self.ranked.iter().map(|(_, tp)| *tp).collect()
    }
}

/// Matches one class's detections against that class's ground truth.
pub fn match_detections<'a>(
    preds: &'a [Detection],
    gts: &[GroundTruthInstance],
    threshold: f64,
) -> Matching<'a> {
    let mut by_video: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_video.entry(g.video_id.as_str()).or_default().push(i);
    }
    let mut consumed = vec![false; gts.len()];

    let mut ranked: Vec<&Detection> = preds.iter().collect();
    ranked.sort_by(|a, b| ranking_order(a, b));

    let ranked = ranked
        .into_iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for &g in by_video.get(d.video_id.as_str()).into_iter().flatten() {
                if consumed[g] {
                    continue;
                }
                let iou = tiou(&d.segment, &gts[g].segment);
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, iou)) if iou >= threshold => {
                    consumed[g] = true;
                    (d, true)
                }
                _ => (d, false),
            }
        })
        .collect();
    Matching {
        ranked,
        num_gt: gts.len(),
    }
}

/// All-points interpolated average precision of a ranked TP/FP list.
pub fn average_precision(flags: &[bool], num_gt: usize) -> Result<f64> {
    if num_gt == 0 {
        return Err(Error::ZeroGroundTruth);
    }
    let mut tp = 0usize;
    let mut envelope: Vec<f64> = flags
        .iter()
        .enumerate()
        .map(|(i, &is_tp)| {
            tp += usize::from(is_tp);
            tp as f64 / (i + 1) as f64
        })
        .collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    // each TP raises recall by 1/num_gt; divide once at the end. Folding
    // from +0.0 (f64's Sum starts at -0.0) keeps an empty area positive.
    let area = flags
        .iter()
        .zip(&envelope)
        .filter(|(is_tp, _)| **is_tp)
        .fold(0.0, |acc, (_, p)| acc + p);
    Ok(area / num_gt as f64)
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().fold(0.0, |acc, v| acc + v) / values.len() as f64
    }
}

/// Evaluates `preds` against `gt`.
pub fn evaluate(
    preds: &PredictionSet,
    gt: &GroundTruthSet,
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let space = gt.label_space();
    let num_classes = space.len();

    let mut dropped = 0usize;
    let mut dets_by_class: Vec<Vec<Detection>> = vec![Vec::new(); num_classes];
    for (video_id, dets) in &preds.results {
        if !gt.videos().contains_key(video_id) {
            match config.unknown_video {
                UnknownVideoPolicy::Error => return Err(Error::UnknownVideo(video_id.clone())),
                UnknownVideoPolicy::Drop => {
                    warn!(
                        "dropping {} detections for unknown video {video_id:?}",
                        dets.len()
                    );
                    dropped += dets.len();
                    continue;
                }
            }
        }
        if let Some(d) = dets.iter().find(|d| d.label_id >= num_classes) {
            return Err(Error::UnknownLabel {
                label_id: d.label_id,
                count: num_classes,
            });
        }
        let mut kept: Vec<&Detection> = dets
            .iter()
            .filter(|d| d.score >= config.min_score)
            .collect();
        kept.sort_by(|a, b| ranking_order(a, b));
        if let Some(max) = config.max_detections_per_video {
            kept.truncate(max);
        }
        dropped += dets.len() - kept.len();
        for d in kept {
            dets_by_class[d.label_id].push(d.clone());
        }
    }

    let mut gts_by_class: Vec<Vec<GroundTruthInstance>> = vec![Vec::new(); num_classes];
    for inst in gt.instances() {
        gts_by_class[inst.label_id].push(inst.clone());
    }

    let thresholds = &config.tiou_thresholds;
    let jobs: Vec<(usize, usize)> = (0..num_classes)
        .filter(|&c| !gts_by_class[c].is_empty())
        .flat_map(|c| (0..thresholds.len()).map(move |t| (c, t)))
        .collect();
    let aps: BTreeMap<(usize, usize), f64> = jobs
        .into_par_iter()
        .map(|(c, t)| {
            let matching = match_detections(&dets_by_class[c], &gts_by_class[c], thresholds[t]);
            let ap = average_precision(&matching.flags(), matching.num_gt)?;
            Ok(((c, t), ap))
        })
        .collect::<Result<_>>()?;

    let classes: Vec<ClassResult> = (0..num_classes)
        .map(|c| ClassResult {
            label_id: c,
            label: space.name(c).unwrap_or_default().to_string(),
            num_gt: gts_by_class[c].len(),
            num_detections: dets_by_class[c].len(),
            ap: (!gts_by_class[c].is_empty())
                .then(|| (0..thresholds.len()).map(|t| aps[&(c, t)]).collect()),
        })
        .collect();

    let map_per_threshold: Vec<f64> = (0..thresholds.len())
        .map(|t| {
            let per_class: Vec<f64> = classes
                .iter()
                .filter_map(|c| c.ap.as_ref().map(|aps| aps[t]))
                .collect();
            mean(&per_class)
        })
        .collect();
    let avg_map = mean(&map_per_threshold);

    Ok(EvalReport {
        thresholds: thresholds.clone(),
        classes,
        map_per_threshold,
        avg_map,
        dropped_detections: dropped,
    })
}

/// Label of the CSV rows holding class-averaged values.
pub const MEAN_ROW_LABEL: &str = "__mean__";

/// CSV rendering of a report: a `label,threshold,ap` header, one row per
/// evaluated class and threshold, one `__mean__` row per threshold with the
/// mAP and a final `__mean__,avg,<avg_map>` row.
pub fn report_csv(report: &EvalReport) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::SchemaViolation(format!("csv: {e}"));
    writer
        .write_record(["label", "threshold", "ap"])
        .map_err(csv_err)?;
    for class in report.evaluated_classes() {
        for (t, ap) in report.thresholds.iter().zip(class.ap.iter().flatten()) {
            writer
                .write_record([
                    class.label.as_str(),
                    &format_decimal(*t),
                    &format_decimal(*ap),
                ])
                .map_err(csv_err)?;
        }
    }
    for (t, m) in report.thresholds.iter().zip(&report.map_per_threshold) {
        writer
            .write_record([MEAN_ROW_LABEL, &format_decimal(*t), &format_decimal(*m)])
            .map_err(csv_err)?;
    }
    writer
        .write_record([MEAN_ROW_LABEL, "avg", &format_decimal(report.avg_map)])
        .map_err(csv_err)?;
    writer
        .into_inner()
        .map_err(|e| Error::SchemaViolation(format!("csv: {e}")))
}
