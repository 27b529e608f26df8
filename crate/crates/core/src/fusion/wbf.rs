use std::cmp::Ordering;

use log::debug;
use rayon::prelude::*;

use super::{pool_groups, FusionConfig, RescaleMode, ScoreCombine};
use crate::domain::{tiou, Detection, PredictionSet, Segment};
use crate::error::{Error, Result};

/// Name given to the output of [`wbf_fuse`].
pub const WBF_MODEL_NAME: &str = "wbf_fused";

/// Counters reported by [`wbf_fuse_with_stats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FusionStats {
    pub groups: usize,
    pub input_detections: usize,
    pub skipped_detections: usize,
    pub clusters: usize,
}

/// Detections matched together, with a fused detection kept up to date as
/// members are added.
#[derive(Debug, Clone)]
pub struct Cluster {
    members: Vec<(Detection, f64)>,
    fused: Detection,
    combine: ScoreCombine,
    sum_w: f64,
    sum_s: f64,
    sum_ws: f64,
    sum_ws_start: f64,
    sum_ws_end: f64,
    sum_w_start: f64,
    sum_w_end: f64,
    max_s: f64,
}

impl Cluster {
    pub fn new(first: Detection, model_weight: f64, combine: ScoreCombine) -> Self {
        let mut cluster = Cluster {
            fused: first.clone(),
            members: Vec::new(),
            combine,
            sum_w: 0.0,
            sum_s: 0.0,
            sum_ws: 0.0,
            sum_ws_start: 0.0,
            sum_ws_end: 0.0,
            sum_w_start: 0.0,
            sum_w_end: 0.0,
            max_s: f64::NEG_INFINITY,
        };
        cluster.push(first, model_weight);
        cluster
    }

    pub fn push(&mut self, d: Detection, model_weight: f64) {
        debug_assert!(
            self.members.is_empty()
                || (d.video_id == self.fused.video_id && d.label_id == self.fused.label_id)
        );
        let ws = model_weight * d.score;
        self.sum_w += model_weight;
        self.sum_s += d.score;
        self.sum_ws += ws;
        self.sum_ws_start += ws * d.segment.start;
        self.sum_ws_end += ws * d.segment.end;
        self.sum_w_start += model_weight * d.segment.start;
        self.sum_w_end += model_weight * d.segment.end;
        self.max_s = self.max_s.max(d.score);
        self.members.push((d, model_weight));

        if self.members.len() == 1 {
            self.fused = self.members[0].0.clone();
            return;
        }
        self.fused.segment = if self.sum_ws > 0.0 {
            Segment {
                start: self.sum_ws_start / self.sum_ws,
                end: self.sum_ws_end / self.sum_ws,
            }
        } else {
            // all-zero scores: fall back to model weights alone
            Segment {
                start: self.sum_w_start / self.sum_w,
                end: self.sum_w_end / self.sum_w,
            }
        };
        self.fused.score = match self.combine {
            ScoreCombine::WeightedMean => self.sum_ws / self.sum_w,
            ScoreCombine::Mean => self.sum_s / self.members.len() as f64,
            ScoreCombine::Max => self.max_s,
        };
    }

    pub fn members(&self) -> &[(Detection, f64)] {
        &self.members
    }

    /// The fused detection with its raw (not yet rescaled) score.
    pub fn fused(&self) -> &Detection {
        &self.fused
    }

    /// Sum of member model weights (`T`).
    pub fn weight_sum(&self) -> f64 {
        self.sum_w
    }
}

/// Fuses a cluster's members from scratch.
///
/// Boundaries are averaged with weights `score × model_weight`; the raw
/// score follows `combine`.
pub fn fuse_cluster(members: &[(Detection, f64)], combine: ScoreCombine) -> Result<Detection> {
    let (first, _) = members.first().ok_or(Error::EmptyCluster)?;
    if members.len() == 1 {
        return Ok(first.clone());
    }
    let sum_w: f64 = members.iter().map(|(_, w)| w).sum();
    let sum_ws: f64 = members.iter().map(|(d, w)| w * d.score).sum();
    let segment = if sum_ws > 0.0 {
        Segment {
            start: members
                .iter()
                .map(|(d, w)| w * d.score * d.segment.start)
                .sum::<f64>()
                / sum_ws,
            end: members
                .iter()
                .map(|(d, w)| w * d.score * d.segment.end)
                .sum::<f64>()
                / sum_ws,
        }
    } else {
        Segment {
            start: members
                .iter()
                .map(|(d, w)| w * d.segment.start)
                .sum::<f64>()
                / sum_w,
            end: members.iter().map(|(d, w)| w * d.segment.end).sum::<f64>() / sum_w,
        }
    };
    let score = match combine {
        ScoreCombine::WeightedMean => sum_ws / sum_w,
        ScoreCombine::Mean => {
            members.iter().map(|(d, _)| d.score).sum::<f64>() / members.len() as f64
        }
        ScoreCombine::Max => members
            .iter()
            .map(|(d, _)| d.score)
            .fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(Detection {
        segment,
        score,
        ..first.clone()
    })
}

/// Index of the cluster whose fused segment overlaps `d` most, if that
/// overlap exceeds `iou_threshold`. Ties go to the lowest index.
pub fn cluster_assign(d: &Detection, clusters: &[Cluster], iou_threshold: f64) -> Option<usize> {
    let mut best = None;
    let mut best_iou = iou_threshold;
    for (i, cluster) in clusters.iter().enumerate() {
        let iou = tiou(&d.segment, &cluster.fused.segment);
        if iou > best_iou {
            best_iou = iou;
            best = Some(i);
        }
    }
    best
}

/// Scales a cluster's raw score by its support `weight_sum` (T) relative to
/// the total model weight (N), clamped to [0, 1].
pub fn rescale_confidence(
    raw_score: f64,
    weight_sum: f64,
    total_weight: f64,
    mode: RescaleMode,
) -> f64 {
    let factor = match mode {
        RescaleMode::MinClamp => weight_sum.min(total_weight) / total_weight,
        RescaleMode::Ratio => weight_sum / total_weight,
        RescaleMode::None => 1.0,
    };
    (raw_score * factor).clamp(0.0, 1.0)
}

/// Processing order: descending score, then video, start, end and source
/// model.
pub(crate) fn processing_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.video_id.cmp(&b.video_id))
        .then(a.segment.start.total_cmp(&b.segment.start))
        .then(a.segment.end.total_cmp(&b.segment.end))
        .then(a.source_model.cmp(&b.source_model))
}

/// Clusters one (video, label) group of `(detection, model_weight)` pairs in
/// processing order. Fused scores in the returned clusters are raw.
pub fn cluster_group(
    mut members: Vec<(Detection, f64)>,
    iou_threshold: f64,
    combine: ScoreCombine,
) -> Vec<Cluster> {
    members.sort_by(|(a, _), (b, _)| processing_order(a, b));
    let mut clusters: Vec<Cluster> = Vec::new();
    for (d, w) in members {
        match cluster_assign(&d, &clusters, iou_threshold) {
            Some(i) => clusters[i].push(d, w),
            None => clusters.push(Cluster::new(d, w, combine)),
        }
    }
    clusters
}

fn fuse_group(
    members: Vec<(Detection, f64)>,
    config: &FusionConfig,
    total_weight: f64,
) -> Vec<Detection> {
    cluster_group(members, config.iou_threshold, config.score_combine)
        .into_iter()
        .map(|c| {
            let mut fused = c.fused;
            fused.score =
                rescale_confidence(fused.score, c.sum_w, total_weight, config.rescale_mode);
            fused
        })
        .collect()
}

/// Weighted box fusion over every (video, label) group of `inputs`.
pub fn wbf_fuse(inputs: &[PredictionSet], config: &FusionConfig) -> Result<PredictionSet> {
    wbf_fuse_with_stats(inputs, config).map(|(set, _)| set)
}

pub fn wbf_fuse_with_stats(
    inputs: &[PredictionSet],
    config: &FusionConfig,
) -> Result<(PredictionSet, FusionStats)> {
    config.validate()?;
    let weights = config.weights_for(inputs)?;
    // Summed in sorted order so the total does not depend on input order.
    let mut sorted = weights.clone();
    sorted.sort_by(f64::total_cmp);
    let total_weight: f64 = sorted.iter().sum();

    let input_detections: usize = inputs.iter().map(PredictionSet::num_detections).sum();
    let groups = pool_groups(inputs, &weights, config.skip_threshold);
    let kept: usize = groups.iter().map(|(_, g)| g.len()).sum();

    let fused: Vec<Vec<Detection>> = groups
        .into_par_iter()
        .map(|(_, members)| fuse_group(members, config, total_weight))
        .collect();

    let stats = FusionStats {
        groups: fused.len(),
        input_detections,
        skipped_detections: input_detections - kept,
        clusters: fused.iter().map(Vec::len).sum(),
    };
    debug!("wbf: {stats:?}");

    let mut out = PredictionSet::new(WBF_MODEL_NAME, 1.0)?;
    for d in fused.into_iter().flatten() {
        out.push(d);
    }
    out.normalize();
    Ok((out, stats))
}
