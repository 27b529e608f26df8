use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pool_groups, FusionConfig};
use crate::domain::{tiou, Detection, PredictionSet};
use crate::error::Result;

pub const NMS_MODEL_NAME: &str = "nms_fused";
pub const SOFT_NMS_MODEL_NAME: &str = "soft_nms_fused";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftNmsMethod {
    /// `s · (1 − tIoU)` for overlaps at or above the IoU threshold.
    Linear,
    /// `s · exp(−tIoU² / sigma)` for every overlap.
    #[default]
    Gaussian,
}

/// Keeper order: higher score, then earlier start, then shorter duration.
fn keeper_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.segment.start.total_cmp(&b.segment.start))
        .then(a.segment.duration().total_cmp(&b.segment.duration()))
        .then(a.source_model.cmp(&b.source_model))
}

fn by_group(detections: Vec<Detection>) -> Vec<Vec<Detection>> {
    let mut groups: BTreeMap<(String, usize), Vec<Detection>> = BTreeMap::new();
    for d in detections {
        groups
            .entry((d.video_id.clone(), d.label_id))
            .or_default()
            .push(d);
    }
    groups.into_values().collect()
}

fn nms_group(mut dets: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    dets.sort_by(keeper_order);
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept
            .iter()
            .all(|k| tiou(&k.segment, &d.segment) < iou_threshold)
        {
            kept.push(d);
        }
    }
    kept
}

/// Greedy non-maximum suppression, applied per (video, label) group.
///
/// Survivors are returned group by group in keeper order.
pub fn nms(detections: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    by_group(detections)
        .into_iter()
        .flat_map(|g| nms_group(g, iou_threshold))
        .collect()
}

fn soft_nms_group(
    mut rest: Vec<Detection>,
    iou_threshold: f64,
    sigma: f64,
    method: SoftNmsMethod,
) -> Vec<Detection> {
    let mut out = Vec::with_capacity(rest.len());
    while !rest.is_empty() {
        let best = rest
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| keeper_order(a, b))
            .map(|(i, _)| i)
            .unwrap();
        let keeper = rest.swap_remove(best);
        for d in rest.iter_mut() {
            let iou = tiou(&keeper.segment, &d.segment);
            d.score *= match method {
                SoftNmsMethod::Linear if iou >= iou_threshold => 1.0 - iou,
                SoftNmsMethod::Linear => 1.0,
                SoftNmsMethod::Gaussian => (-(iou * iou) / sigma).exp(),
            };
        }
        out.push(keeper);
    }
    out
}

/// Soft-NMS: overlapping detections are kept with decayed scores instead of
/// being removed. Applied per (video, label) group.
pub fn soft_nms(
    detections: Vec<Detection>,
    iou_threshold: f64,
    sigma: f64,
    method: SoftNmsMethod,
) -> Vec<Detection> {
    by_group(detections)
        .into_iter()
        .flat_map(|g| soft_nms_group(g, iou_threshold, sigma, method))
        .collect()
}

fn pooled(
    inputs: &[PredictionSet],
    config: &FusionConfig,
    name: &str,
    run: impl Fn(Vec<Detection>) -> Vec<Detection> + Sync,
) -> Result<PredictionSet> {
    config.validate()?;
    let weights = config.weights_for(inputs)?;
    let groups = pool_groups(inputs, &weights, config.skip_threshold);
    let out: Vec<Vec<Detection>> = groups
        .into_par_iter()
        .map(|(_, members)| run(members.into_iter().map(|(d, _)| d).collect()))
        .collect();
    let mut set = PredictionSet::new(name, 1.0)?;
    for d in out.into_iter().flatten() {
        set.push(d);
    }
    set.normalize();
    Ok(set)
}

/// Pools every input's detections and applies [`nms`].
pub fn nms_fuse(inputs: &[PredictionSet], config: &FusionConfig) -> Result<PredictionSet> {
    pooled(inputs, config, NMS_MODEL_NAME, |dets| {
        nms_group(dets, config.iou_threshold)
    })
}

/// Pools every input's detections and applies [`soft_nms`].
pub fn soft_nms_fuse(inputs: &[PredictionSet], config: &FusionConfig) -> Result<PredictionSet> {
    pooled(inputs, config, SOFT_NMS_MODEL_NAME, |dets| {
        soft_nms_group(
            dets,
            config.iou_threshold,
            config.soft_nms_sigma,
            config.soft_nms_method,
        )
    })
}
