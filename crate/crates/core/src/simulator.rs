//! Seeded synthetic benchmark: ground truth plus noisy per-model
//! predictions, and an experiment runner comparing individual models with
//! their fused ensembles.
//!
//! Randomness comes from ChaCha8 ([`rand_chacha::ChaCha8Rng`]) seeded with
//! `seed_from_u64`. Every video gets its own stream: the generator is
//! seeded with the run seed and switched to stream `(tag << 40) | video_index`
//! with `set_stream`, where tag 0 is ground truth and tag 1 is predictions.
//! Output therefore does not depend on iteration order or thread schedule.
//! All generated times and scores are rounded to 1e-6 so that files written
//! by [`crate::datasetio`] reload exactly.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    Detection, GroundTruthInstance, GroundTruthSet, LabelSpace, PredictionSet, Segment,
    VideoAnnotations,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalReport};
use crate::fusion::{nms_fuse, soft_nms_fuse, wbf_fuse, FusionConfig};

const GT_STREAM: u64 = 0;
const PRED_STREAM: u64 = 1;
const MIN_DETECTION_DURATION: f64 = 0.1;

/// Score distributions for correct and spurious detections: Gaussians
/// clamped to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreModel {
    pub tp_score_mean: f64,
    pub fp_score_mean: f64,
    pub score_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelNoiseProfile {
    #[serde(default)]
    pub name: String,
    /// Weight given to the model's predictions when fused.
    #[serde(default = "default_weight")]
    pub weight: f64,
    /// Standard deviation (seconds) of the Gaussian noise on each endpoint.
    pub boundary_jitter_sigma: f64,
    pub miss_rate: f64,
    /// Expected spurious detections per video (Poisson mean).
    pub false_positive_rate: f64,
    pub label_confusion_rate: f64,
    pub score_model: ScoreModel,
}

fn default_weight() -> f64 {
    1.0
}

impl ModelNoiseProfile {
    /// A model that reproduces the ground truth exactly with score 1.
    pub fn noiseless(name: &str) -> Self {
        ModelNoiseProfile {
            name: name.into(),
            weight: 1.0,
            boundary_jitter_sigma: 0.0,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            label_confusion_rate: 0.0,
            score_model: ScoreModel {
                tp_score_mean: 1.0,
                fp_score_mean: 0.0,
                score_sigma: 0.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probability = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{name} must lie in [0, 1], got {p}"
                )))
            }
        };
        let non_negative = |name: &str, x: f64| {
            if x.is_finite() && x >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{name} must be non-negative, got {x}"
                )))
            }
        };
        probability("miss_rate", self.miss_rate)?;
        probability("label_confusion_rate", self.label_confusion_rate)?;
        non_negative("boundary_jitter_sigma", self.boundary_jitter_sigma)?;
        non_negative("false_positive_rate", self.false_positive_rate)?;
        non_negative("score_sigma", self.score_model.score_sigma)?;
        if !(self.score_model.tp_score_mean.is_finite()
            && self.score_model.fp_score_mean.is_finite())
        {
            return Err(Error::InvalidConfig("score means must be finite".into()));
        }
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "model weight must be positive, got {}",
                self.weight
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub num_videos: usize,
    pub num_classes: usize,
    pub video_duration: f64,
    /// Inclusive range of actions per video.
    pub actions_per_video: (usize, usize),
    /// Range of action durations in seconds; also used for spurious
    /// detections.
    pub action_duration: (f64, f64),
    pub models: Vec<ModelNoiseProfile>,
}

impl Default for SimConfig {
    /// 200 videos of 35 s with ten classes and two models: a stronger
    /// "multimodal" one and a weaker "unimodal" one.
    fn default() -> Self {
        SimConfig {
            seed: 42,
            num_videos: 200,
            num_classes: 10,
            video_duration: 35.0,
            actions_per_video: (2, 8),
            action_duration: (1.0, 8.0),
            models: vec![
                ModelNoiseProfile {
                    name: "multimodal".into(),
                    weight: 1.0,
                    boundary_jitter_sigma: 0.8,
                    miss_rate: 0.15,
                    false_positive_rate: 2.5,
                    label_confusion_rate: 0.1,
                    score_model: ScoreModel {
                        tp_score_mean: 0.62,
                        fp_score_mean: 0.4,
                        score_sigma: 0.2,
                    },
                },
                ModelNoiseProfile {
                    name: "unimodal".into(),
                    weight: 1.0,
                    boundary_jitter_sigma: 0.9,
                    miss_rate: 0.17,
                    false_positive_rate: 2.5,
                    label_confusion_rate: 0.12,
                    score_model: ScoreModel {
                        tp_score_mean: 0.6,
                        fp_score_mean: 0.4,
                        score_sigma: 0.2,
                    },
                },
            ],
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidConfig(
                "num_classes must be at least 1".into(),
            ));
        }
        if !(self.video_duration.is_finite() && self.video_duration > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "video_duration must be positive, got {}",
                self.video_duration
            )));
        }
        let (lo, hi) = self.actions_per_video;
        if lo > hi {
            return Err(Error::InvalidConfig(format!(
                "actions_per_video range ({lo}, {hi}) is empty"
            )));
        }
        let (lo, hi) = self.action_duration;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidConfig(format!(
                "action_duration range ({lo}, {hi}) must be positive and non-empty"
            )));
        }
        if lo > self.video_duration {
            return Err(Error::InfeasibleConfig(format!(
                "minimum action duration {lo}s exceeds video duration {}s",
                self.video_duration
            )));
        }
        self.models.iter().try_for_each(ModelNoiseProfile::validate)
    }

    fn model_name(&self, index: usize) -> String {
        let name = &self.models[index].name;
        if name.is_empty() {
            format!("model_{index}")
        } else {
            name.clone()
        }
    }
}

fn stream(seed: u64, tag: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 40) | index as u64);
    rng
}

fn quantize(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn gaussian(rng: &mut impl Rng, mean: f64, sigma: f64) -> f64 {
    Normal::new(mean, sigma)
        .expect("validated sigma")
        .sample(rng)
}

/// Draws a segment of uniform duration placed uniformly inside the video.
fn place_segment(rng: &mut impl Rng, duration_range: (f64, f64), video_duration: f64) -> Segment {
    let length = uniform(rng, duration_range.0, duration_range.1).min(video_duration);
    let start = quantize(uniform(rng, 0.0, video_duration - length));
    let end = quantize(start + length).min(video_duration);
    Segment { start, end }
}

fn label_names(num_classes: usize) -> Vec<String> {
    (0..num_classes).map(|c| format!("class_{c:02}")).collect()
}

/// Generates synthetic ground truth for `config`.
pub fn generate_ground_truth(config: &SimConfig) -> Result<GroundTruthSet> {
    config.validate()?;
    let space = LabelSpace::new(label_names(config.num_classes))?;
    let videos: BTreeMap<String, VideoAnnotations> = (0..config.num_videos)
        .into_par_iter()
        .map(|v| {
            let video_id = format!("video_{v:05}");
            let mut rng = stream(config.seed, GT_STREAM, v);
            let (lo, hi) = config.actions_per_video;
            let count = rng.random_range(lo..=hi);
            let instances = (0..count)
                .map(|_| {
                    let label_id = rng.random_range(0..config.num_classes);
                    let segment =
                        place_segment(&mut rng, config.action_duration, config.video_duration);
                    GroundTruthInstance {
                        video_id: video_id.clone(),
                        label_id,
                        segment,
                    }
                })
                .collect();
            (
                video_id,
                VideoAnnotations {
                    duration: config.video_duration,
                    instances,
                },
            )
        })
        .collect();
    GroundTruthSet::new(space, videos)
}

/// Widens a segment to the minimum detection length, keeping it inside
/// `[0, video_duration]`.
fn enforce_min_duration(mut start: f64, mut end: f64, video_duration: f64) -> Segment {
    if end - start < MIN_DETECTION_DURATION {
        let half = MIN_DETECTION_DURATION.min(video_duration) / 2.0;
        let center = ((start + end) / 2.0).clamp(half, video_duration - half);
        start = center - half;
        end = center + half;
    }
    let start = quantize(start).max(0.0);
    let end = quantize(end).min(video_duration);
    Segment { start, end }
}

/// Simulates one model's predictions on `gt`.
///
/// Each ground-truth instance is missed with probability `miss_rate`;
/// otherwise its endpoints are jittered, its label is confused with
/// probability `label_confusion_rate` and it gets a TP-distribution score.
/// Each video also receives `Poisson(false_positive_rate)` spurious
/// detections with durations drawn from `fp_duration`.
pub fn perturb_model(
    gt: &GroundTruthSet,
    profile: &ModelNoiseProfile,
    fp_duration: (f64, f64),
    seed: u64,
) -> Result<PredictionSet> {
    profile.validate()?;
    let num_classes = gt.label_space().len();
    let fp_count = (profile.false_positive_rate > 0.0)
        .then(|| Poisson::new(profile.false_positive_rate))
        .transpose()
        .map_err(|e| Error::InvalidConfig(format!("false_positive_rate: {e}")))?;
    let scores = &profile.score_model;

    let videos: Vec<(&String, &VideoAnnotations)> = gt.videos().iter().collect();
    let results: Vec<(String, Vec<Detection>)> = videos
        .into_par_iter()
        .enumerate()
        .map(|(v, (video_id, video))| {
            let mut rng = stream(seed, PRED_STREAM, v);
            let mut dets = Vec::new();
            for inst in &video.instances {
                if rng.random::<f64>() < profile.miss_rate {
                    continue;
                }
                let start = (inst.segment.start
                    + gaussian(&mut rng, 0.0, profile.boundary_jitter_sigma))
                .clamp(0.0, video.duration);
                let end = (inst.segment.end
                    + gaussian(&mut rng, 0.0, profile.boundary_jitter_sigma))
                .clamp(0.0, video.duration);
                let (start, end) = if start <= end {
                    (start, end)
                } else {
                    (end, start)
                };
                let mut label_id = inst.label_id;
                if num_classes > 1 && rng.random::<f64>() < profile.label_confusion_rate {
                    let other = rng.random_range(0..num_classes - 1);
                    label_id = if other >= label_id { other + 1 } else { other };
                }
                let score =
                    gaussian(&mut rng, scores.tp_score_mean, scores.score_sigma).clamp(0.0, 1.0);
                dets.push(Detection {
                    video_id: video_id.clone(),
                    label_id,
                    segment: enforce_min_duration(start, end, video.duration),
                    score: quantize(score),
                    source_model: 0,
                });
            }
            let spurious = fp_count.map_or(0, |p| p.sample(&mut rng) as usize);
            for _ in 0..spurious {
                let label_id = rng.random_range(0..num_classes);
                let segment = place_segment(&mut rng, fp_duration, video.duration);
                let score =
                    gaussian(&mut rng, scores.fp_score_mean, scores.score_sigma).clamp(0.0, 1.0);
                dets.push(Detection {
                    video_id: video_id.clone(),
                    label_id,
                    segment: enforce_min_duration(segment.start, segment.end, video.duration),
                    score: quantize(score),
                    source_model: 0,
                });
            }
            (video_id.clone(), dets)
        })
        .collect();

    let mut set = PredictionSet::new(profile.name.clone(), profile.weight)?;
    set.results = results.into_iter().collect();
    set.normalize();
    Ok(set)
}

/// Seed used for model `index` of a run seeded with `seed`.
pub fn model_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Average mAP of one prediction set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodResult {
    pub name: String,
    pub avg_map: f64,
    pub map_per_threshold: Vec<f64>,
}

impl MethodResult {
    fn from_report(name: &str, report: &EvalReport) -> Self {
        MethodResult {
            name: name.into(),
            avg_map: report.avg_map,
            map_per_threshold: report.map_per_threshold.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub thresholds: Vec<f64>,
    pub models: Vec<MethodResult>,
    pub wbf: MethodResult,
    pub nms: MethodResult,
    pub soft_nms: MethodResult,
    pub best_individual_avg_map: f64,
    /// Fused minus best individual avg mAP.
    pub wbf_delta: f64,
    pub nms_delta: f64,
    pub soft_nms_delta: f64,
}

/// Everything generated for one experiment, kept so callers can write it out.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub ground_truth: GroundTruthSet,
    pub predictions: Vec<PredictionSet>,
    pub wbf: PredictionSet,
}

/// Generates ground truth and per-model predictions, fuses them three ways
/// and evaluates everything against the same ground truth.
pub fn run_ensemble_experiment(
    sim: &SimConfig,
    fusion: &FusionConfig,
    eval: &EvalConfig,
) -> Result<ExperimentReport> {
    run_ensemble_experiment_with_data(sim, fusion, eval).map(|(report, _)| report)
}

pub fn run_ensemble_experiment_with_data(
    sim: &SimConfig,
    fusion: &FusionConfig,
    eval: &EvalConfig,
) -> Result<(ExperimentReport, ExperimentData)> {
    sim.validate()?;
    fusion.validate()?;
    eval.validate()?;
    if sim.models.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "an ensemble experiment needs at least 2 models, got {}",
            sim.models.len()
        )));
    }
    let gt = generate_ground_truth(sim)?;
    let predictions = sim
        .models
        .iter()
        .enumerate()
        .map(|(i, profile)| {
            let mut set =
                perturb_model(&gt, profile, sim.action_duration, model_seed(sim.seed, i))?;
            set.model_name = sim.model_name(i);
            Ok(set)
        })
        .collect::<Result<Vec<_>>>()?;

    let models = predictions
        .iter()
        .map(|p| {
            Ok(MethodResult::from_report(
                &p.model_name,
                &evaluate(p, &gt, eval)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let wbf_set = wbf_fuse(&predictions, fusion)?;
    let wbf = MethodResult::from_report("wbf", &evaluate(&wbf_set, &gt, eval)?);
    let nms = MethodResult::from_report(
        "nms",
        &evaluate(&nms_fuse(&predictions, fusion)?, &gt, eval)?,
    );
    let soft_nms = MethodResult::from_report(
        "soft_nms",
        &evaluate(&soft_nms_fuse(&predictions, fusion)?, &gt, eval)?,
    );

    let best = models
        .iter()
        .map(|m| m.avg_map)
        .fold(f64::NEG_INFINITY, f64::max);
    let report = ExperimentReport {
        seed: sim.seed,
        thresholds: eval.tiou_thresholds.clone(),
        best_individual_avg_map: best,
        wbf_delta: wbf.avg_map - best,
        nms_delta: nms.avg_map - best,
        soft_nms_delta: soft_nms.avg_map - best,
        models,
        wbf,
        nms,
        soft_nms,
    };
    let data = ExperimentData {
        ground_truth: gt,
        predictions,
        wbf: wbf_set,
    };
    Ok((report, data))
}

/// Human-readable table with values in percent.
pub fn format_table(thresholds: &[f64], rows: &[MethodResult]) -> String {
    let width = rows
        .iter()
        .map(|r| r.name.len())
        .max()
        .unwrap_or(0)
        .max("Method".len());
    let mut out = format!("{:<width$}  {:>7}", "Method", "Avg mAP");
    for t in thresholds {
        out.push_str(&format!("  {:>7}", format!("@{t}")));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{:<width$}  {:>7.1}",
            row.name,
            row.avg_map * 100.0
        ));
        for m in &row.map_per_threshold {
            out.push_str(&format!("  {:>7.1}", m * 100.0));
        }
        out.push('\n');
    }
    out
}

impl fmt::Display for ExperimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut rows = self.models.clone();
        rows.extend([self.nms.clone(), self.soft_nms.clone(), self.wbf.clone()]);
        write!(f, "{}", format_table(&self.thresholds, &rows))?;
        write!(
            f,
            "WBF vs best single model: {:+.1}",
            self.wbf_delta * 100.0
        )
    }
}
