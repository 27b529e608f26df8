//! Ensemble fusion of temporal detections.
//!
//! [`wbf_fuse`] implements weighted box fusion on 1D segments; [`nms`] and
//! [`soft_nms`] are the suppression baselines. All fusers operate
//! independently on each (video, label) group and never merge across them.

mod suppress;
mod wbf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use suppress::{
    nms, nms_fuse, soft_nms, soft_nms_fuse, SoftNmsMethod, NMS_MODEL_NAME, SOFT_NMS_MODEL_NAME,
};
pub use wbf::{
    cluster_assign, cluster_group, fuse_cluster, rescale_confidence, wbf_fuse, wbf_fuse_with_stats,
    Cluster, FusionStats, WBF_MODEL_NAME,
};

/// How a cluster's confidence is scaled by the weight of the models that
/// support it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleMode {
    /// `raw * min(T, N) / N`
    #[default]
    MinClamp,
    /// `raw * T / N`
    Ratio,
    None,
}

/// How member scores are combined into the cluster's raw score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreCombine {
    /// `Σ wᵢsᵢ / Σ wᵢ` over members.
    #[default]
    WeightedMean,
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub iou_threshold: f64,
    /// Detections scoring below this never take part in fusion.
    pub skip_threshold: f64,
    pub rescale_mode: RescaleMode,
    pub score_combine: ScoreCombine,
    /// One weight per input set. Empty means "use each set's own
    /// `model_weight`".
    pub model_weights: Vec<f64>,
    pub soft_nms_sigma: f64,
    pub soft_nms_method: SoftNmsMethod,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            iou_threshold: 0.55,
            skip_threshold: 0.0,
            rescale_mode: RescaleMode::MinClamp,
            score_combine: ScoreCombine::WeightedMean,
            model_weights: Vec::new(),
            soft_nms_sigma: 0.5,
            soft_nms_method: SoftNmsMethod::Gaussian,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "iou_threshold must lie in (0, 1), got {}",
                self.iou_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.skip_threshold) {
            return Err(Error::InvalidConfig(format!(
                "skip_threshold must lie in [0, 1], got {}",
                self.skip_threshold
            )));
        }
        if let Some(w) = self
            .model_weights
            .iter()
            .find(|w| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::InvalidConfig(format!(
                "model weights must be positive, got {w}"
            )));
        }
        if !(self.soft_nms_sigma.is_finite() && self.soft_nms_sigma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "soft_nms_sigma must be positive, got {}",
                self.soft_nms_sigma
            )));
        }
        Ok(())
    }

    /// Resolves the per-input weights for `inputs` sets.
    pub(crate) fn weights_for(&self, inputs: &[crate::domain::PredictionSet]) -> Result<Vec<f64>> {
        if inputs.is_empty() {
            return Err(Error::EmptyModelList);
        }
        if self.model_weights.is_empty() {
            return Ok(inputs.iter().map(|p| p.model_weight).collect());
        }
        if self.model_weights.len() != inputs.len() {
            return Err(Error::WeightLengthMismatch {
                weights: self.model_weights.len(),
                models: inputs.len(),
            });
        }
        Ok(self.model_weights.clone())
    }
}

type GroupKey = (String, usize);

/// Pools the inputs into (video, label) groups, tagging each detection with
/// its input index and weight and dropping those below `skip_threshold`.
pub(crate) fn pool_groups(
    inputs: &[crate::domain::PredictionSet],
    weights: &[f64],
    skip_threshold: f64,
) -> Vec<(GroupKey, Vec<(crate::domain::Detection, f64)>)> {
    let mut groups: std::collections::BTreeMap<GroupKey, Vec<_>> = Default::default();
    for (model, (set, &weight)) in inputs.iter().zip(weights).enumerate() {
        for d in set.detections().filter(|d| d.score >= skip_threshold) {
            let mut d = d.clone();
            d.source_model = model;
            groups
                .entry((d.video_id.clone(), d.label_id))
                .or_default()
                .push((d, weight));
        }
    }
    groups.into_iter().collect()
}
