//! Shared helpers for the integration tests: random instance generators and
//! a brute-force mAP reference that shares no code with `talfuse::eval`.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use talfuse::{
    Detection, GroundTruthInstance, GroundTruthSet, LabelSpace, PredictionSet, Segment,
    VideoAnnotations,
};

pub const VIDEO_DURATION: f64 = 30.0;

/// Small random evaluation instance: ≤ `max_videos` videos, ≤ `max_classes`
/// classes, ≤ `max_gt_per_class` GT instances per class and ≤ `max_dets`
/// detections. Coordinates and scores sit on coarse grids so that ties in
/// score and tIoU actually occur.
pub struct InstanceSpec {
    pub max_videos: usize,
    pub max_classes: usize,
    pub max_gt_per_class: usize,
    pub max_dets: usize,
}

pub const SMALL: InstanceSpec = InstanceSpec {
    max_videos: 5,
    max_classes: 3,
    max_gt_per_class: 4,
    max_dets: 8,
};

fn grid_segment(rng: &mut impl Rng) -> Segment {
    let start = rng.random_range(0..40) as f64 * 0.5;
    let length = rng.random_range(1..13) as f64 * 0.5;
    Segment::new(start, (start + length).min(VIDEO_DURATION)).unwrap()
}

pub fn random_instance(rng: &mut impl Rng, spec: &InstanceSpec) -> (GroundTruthSet, PredictionSet) {
    let num_videos = rng.random_range(1..=spec.max_videos);
    let num_classes = rng.random_range(1..=spec.max_classes);
    let labels: Vec<String> = (0..num_classes).map(|c| format!("c{c}")).collect();
    let video_ids: Vec<String> = (0..num_videos).map(|v| format!("v{v}")).collect();

    let mut videos: BTreeMap<String, VideoAnnotations> = video_ids
        .iter()
        .map(|id| {
            (
                id.clone(),
                VideoAnnotations {
                    duration: VIDEO_DURATION,
                    instances: Vec::new(),
                },
            )
        })
        .collect();
    for label_id in 0..num_classes {
        for _ in 0..rng.random_range(0..=spec.max_gt_per_class) {
            let video = &video_ids[rng.random_range(0..num_videos)];
            videos
                .get_mut(video)
                .unwrap()
                .instances
                .push(GroundTruthInstance {
                    video_id: video.clone(),
                    label_id,
                    segment: grid_segment(rng),
                });
        }
    }
    let gt = GroundTruthSet::new(LabelSpace::new(&labels).unwrap(), videos).unwrap();

    let mut preds = PredictionSet::new("random", 1.0).unwrap();
    let gt_instances: Vec<&GroundTruthInstance> = gt.instances().collect();
    for _ in 0..rng.random_range(0..=spec.max_dets) {
        // half of the detections are perturbed copies of GT instances
        let (video_id, label_id, segment) = if !gt_instances.is_empty() && rng.random_bool(0.5) {
            let g = gt_instances[rng.random_range(0..gt_instances.len())];
            let shift = rng.random_range(-4..=4) as f64 * 0.5;
            let start = (g.segment.start + shift).max(0.0);
            let end = (g.segment.end + rng.random_range(-4..=4) as f64 * 0.5).min(VIDEO_DURATION);
            let segment = Segment::new(start, end).unwrap_or(g.segment);
            (g.video_id.clone(), g.label_id, segment)
        } else {
            (
                video_ids[rng.random_range(0..num_videos)].clone(),
                rng.random_range(0..num_classes),
                grid_segment(rng),
            )
        };
        preds.push(Detection {
            video_id,
            label_id,
            segment,
            score: rng.random_range(1..=10) as f64 / 10.0,
            source_model: 0,
        });
    }
    preds.normalize();
    (gt, preds)
}

/// Ground truth identical to the predictions' segments, all scored 1.
pub fn perfect_predictions(gt: &GroundTruthSet) -> PredictionSet {
    let mut preds = PredictionSet::new("perfect", 1.0).unwrap();
    for inst in gt.instances() {
        preds.push(Detection {
            video_id: inst.video_id.clone(),
            label_id: inst.label_id,
            segment: inst.segment,
            score: 1.0,
            source_model: 0,
        });
    }
    preds
}

pub mod oracle {
    //! Brute-force reference: explicit enumeration of matches and a literal
    //! integration of the interpolated precision/recall curve.

    use super::*;

    fn overlap(a: &Segment, b: &Segment) -> f64 {
        let lo = if a.start > b.start { a.start } else { b.start };
        let hi = if a.end < b.end { a.end } else { b.end };
        if hi <= lo {
            return 0.0;
        }
        let inter = hi - lo;
        inter / ((a.end - a.start) + (b.end - b.start) - inter)
    }

    /// TP flags for one class in ranking order.
    pub fn flags(preds: &[&Detection], gts: &[&GroundTruthInstance], threshold: f64) -> Vec<bool> {
        let mut order: Vec<&Detection> = preds.to_vec();
        order.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then(a.video_id.cmp(&b.video_id))
                .then(a.segment.start.partial_cmp(&b.segment.start).unwrap())
                .then(a.segment.end.partial_cmp(&b.segment.end).unwrap())
        });
        let mut used = vec![false; gts.len()];
        let mut out = Vec::new();
        for p in order {
            let mut best_iou = -1.0;
            let mut best_gt = usize::MAX;
            for (j, g) in gts.iter().enumerate() {
                if used[j] || g.video_id != p.video_id {
                    continue;
                }
                let iou = overlap(&p.segment, &g.segment);
                if iou > best_iou {
                    best_iou = iou;
                    best_gt = j;
                }
            }
            if best_gt != usize::MAX && best_iou >= threshold {
                used[best_gt] = true;
                out.push(true);
            } else {
                out.push(false);
            }
        }
        out
    }

    /// Σ Δrecall × max precision at any rank with recall ≥ the current one.
    pub fn ap(flags: &[bool], num_gt: usize) -> f64 {
        let n = flags.len();
        let mut precision = vec![0.0; n];
        let mut recall = vec![0.0; n];
        let mut tp = 0.0;
        for k in 0..n {
            if flags[k] {
                tp += 1.0;
            }
            precision[k] = tp / (k as f64 + 1.0);
            recall[k] = tp / num_gt as f64;
        }
        let mut area = 0.0;
        let mut previous_recall = 0.0;
        for k in 0..n {
            if recall[k] > previous_recall {
                let interpolated = (0..n)
                    .filter(|&j| recall[j] >= recall[k])
                    .map(|j| precision[j])
                    .fold(0.0, f64::max);
                area += (recall[k] - previous_recall) * interpolated;
                previous_recall = recall[k];
            }
        }
        area
    }

    /// Per-class AP (None when a class has no GT) per threshold, mAP per
    /// threshold and average mAP.
    pub struct Reference {
        pub per_class: Vec<Vec<Option<f64>>>,
        pub map_per_threshold: Vec<f64>,
        pub avg_map: f64,
    }

    pub fn evaluate(preds: &PredictionSet, gt: &GroundTruthSet, thresholds: &[f64]) -> Reference {
        let num_classes = gt.label_space().len();
        let mut per_class = Vec::new();
        let mut map_per_threshold = Vec::new();
        for &t in thresholds {
            let mut row = Vec::new();
            let mut included = Vec::new();
            for c in 0..num_classes {
                let p: Vec<&Detection> = preds.detections().filter(|d| d.label_id == c).collect();
                let g: Vec<&GroundTruthInstance> =
                    gt.instances().filter(|i| i.label_id == c).collect();
                if g.is_empty() {
                    row.push(None);
                    continue;
                }
                let value = ap(&flags(&p, &g, t), g.len());
                included.push(value);
                row.push(Some(value));
            }
            per_class.push(row);
            map_per_threshold.push(if included.is_empty() {
                0.0
            } else {
                included.iter().sum::<f64>() / included.len() as f64
            });
        }
        let avg_map = map_per_threshold.iter().sum::<f64>() / map_per_threshold.len() as f64;
        Reference {
            per_class,
            map_per_threshold,
            avg_map,
        }
    }

    /// Largest absolute difference between a report and the reference.
    pub fn max_deviation(report: &talfuse::eval::EvalReport, reference: &Reference) -> f64 {
        let mut worst = (report.avg_map - reference.avg_map).abs();
        for (t, m) in reference.map_per_threshold.iter().enumerate() {
            worst = worst.max((report.map_per_threshold[t] - m).abs());
            for (c, expected) in reference.per_class[t].iter().enumerate() {
                match (report.ap(c, t), expected) {
                    (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                    (None, None) => {}
                    _ => return f64::INFINITY,
                }
            }
        }
        worst
    }
}

pub mod fusion_groups {
    //! Random single-group fusion inputs.

    use super::*;

    /// 1–3 models with up to 4 detections each, all in video "v", label 0.
    pub fn random_models(rng: &mut impl Rng, distinct_scores: bool) -> Vec<PredictionSet> {
        let num_models = rng.random_range(1..=3);
        let mut used_scores = Vec::new();
        (0..num_models)
            .map(|m| {
                let mut set =
                    PredictionSet::new(format!("m{m}"), rng.random_range(0.2..3.0)).unwrap();
                for _ in 0..rng.random_range(0..=4) {
                    let start = rng.random_range(0.0..20.0);
                    let length = rng.random_range(0.5..8.0);
                    let mut score: f64 = rng.random_range(0.0..1.0);
                    if distinct_scores {
                        while used_scores.contains(&score) {
                            score = rng.random_range(0.0..1.0);
                        }
                        used_scores.push(score);
                    }
                    set.push(Detection {
                        video_id: "v".into(),
                        label_id: 0,
                        segment: Segment::new(start, start + length).unwrap(),
                        score,
                        source_model: 0,
                    });
                }
                set
            })
            .collect()
    }
}

pub mod fusion_checks {
    //! Fusion invariants as reusable checks returning a description of the
    //! first violation.

    use super::*;
    use talfuse::fusion::{
        cluster_group, fuse_cluster, nms, nms_fuse, rescale_confidence, soft_nms_fuse, wbf_fuse,
        FusionConfig,
    };
    use talfuse::tiou;

    pub type Check = Result<(), String>;

    fn pooled(models: &[PredictionSet]) -> Vec<(Detection, f64)> {
        models
            .iter()
            .enumerate()
            .flat_map(|(m, set)| {
                set.detections().map(move |d| {
                    let mut d = d.clone();
                    d.source_model = m;
                    (d, set.model_weight)
                })
            })
            .collect()
    }

    /// Fused boundaries lie within the members' hull and match a from-scratch
    /// fusion of the members.
    pub fn hull_and_incremental(models: &[PredictionSet], config: &FusionConfig) -> Check {
        for cluster in cluster_group(pooled(models), config.iou_threshold, config.score_combine) {
            let members = cluster.members();
            let fused = cluster.fused();
            let min_start = members
                .iter()
                .map(|(d, _)| d.segment.start)
                .fold(f64::INFINITY, f64::min);
            let max_start = members
                .iter()
                .map(|(d, _)| d.segment.start)
                .fold(f64::NEG_INFINITY, f64::max);
            let min_end = members
                .iter()
                .map(|(d, _)| d.segment.end)
                .fold(f64::INFINITY, f64::min);
            let max_end = members
                .iter()
                .map(|(d, _)| d.segment.end)
                .fold(f64::NEG_INFINITY, f64::max);
            let eps = 1e-9;
            if fused.segment.start < min_start - eps || fused.segment.start > max_start + eps {
                return Err(format!(
                    "fused start {} outside [{min_start}, {max_start}]",
                    fused.segment.start
                ));
            }
            if fused.segment.end < min_end - eps || fused.segment.end > max_end + eps {
                return Err(format!(
                    "fused end {} outside [{min_end}, {max_end}]",
                    fused.segment.end
                ));
            }
            let batch = fuse_cluster(members, config.score_combine).map_err(|e| e.to_string())?;
            if (batch.segment.start - fused.segment.start).abs() > eps
                || (batch.segment.end - fused.segment.end).abs() > eps
            {
                return Err(format!(
                    "incremental {:?} != batch {:?}",
                    fused.segment, batch.segment
                ));
            }
        }
        Ok(())
    }

    /// When no pair in the group overlaps above the threshold, the output is
    /// the input with rescaled scores.
    pub fn disjoint_idempotence(models: &[PredictionSet], config: &FusionConfig) -> Check {
        let all = pooled(models);
        let overlapping = all.iter().enumerate().any(|(i, (a, _))| {
            all[i + 1..]
                .iter()
                .any(|(b, _)| tiou(&a.segment, &b.segment) > config.iou_threshold)
        });
        if overlapping {
            return Ok(());
        }
        // the fuser sums model weights in ascending order
        let mut weights: Vec<f64> = models.iter().map(|m| m.model_weight).collect();
        weights.sort_by(f64::total_cmp);
        let total: f64 = weights.iter().sum();
        let fused = wbf_fuse(models, config).map_err(|e| e.to_string())?;
        if fused.num_detections() != all.len() {
            return Err(format!(
                "{} detections in, {} out",
                all.len(),
                fused.num_detections()
            ));
        }
        for (d, w) in &all {
            let expected = rescale_confidence(d.score, *w, total, config.rescale_mode);
            let found = fused
                .detections()
                .any(|f| f.segment == d.segment && f.score == expected);
            if !found {
                return Err(format!(
                    "{:?} with score {expected} missing from output",
                    d.segment
                ));
            }
        }
        Ok(())
    }

    fn sorted_output(set: &PredictionSet) -> Vec<Detection> {
        let mut dets: Vec<Detection> = set.detections().cloned().collect();
        dets.sort_by(|a, b| {
            a.segment
                .start
                .total_cmp(&b.segment.start)
                .then(a.segment.end.total_cmp(&b.segment.end))
                .then(a.score.total_cmp(&b.score))
        });
        dets
    }

    fn same_fusion(a: &PredictionSet, b: &PredictionSet, seg_tol: f64, score_tol: f64) -> Check {
        let (a, b) = (sorted_output(a), sorted_output(b));
        if a.len() != b.len() {
            return Err(format!("{} vs {} fused detections", a.len(), b.len()));
        }
        for (x, y) in a.iter().zip(&b) {
            if (x.segment.start - y.segment.start).abs() > seg_tol
                || (x.segment.end - y.segment.end).abs() > seg_tol
                || (x.score - y.score).abs() > score_tol
            {
                return Err(format!("{x:?} vs {y:?}"));
            }
        }
        Ok(())
    }

    /// Reversing the model order (scores assumed distinct) changes no
    /// segment by more than 1e-9 and no score at all.
    pub fn permutation_stability(models: &[PredictionSet], config: &FusionConfig) -> Check {
        let forward = wbf_fuse(models, config).map_err(|e| e.to_string())?;
        let reversed: Vec<PredictionSet> = models.iter().rev().cloned().collect();
        let backward = wbf_fuse(&reversed, config).map_err(|e| e.to_string())?;
        same_fusion(&forward, &backward, 1e-9, 0.0)
    }

    /// Scaling every model weight by `factor` leaves the fusion unchanged.
    pub fn weight_scaling(models: &[PredictionSet], config: &FusionConfig, factor: f64) -> Check {
        let base = wbf_fuse(models, config).map_err(|e| e.to_string())?;
        let scaled_models: Vec<PredictionSet> = models
            .iter()
            .map(|m| PredictionSet {
                model_weight: m.model_weight * factor,
                ..m.clone()
            })
            .collect();
        let scaled = wbf_fuse(&scaled_models, config).map_err(|e| e.to_string())?;
        same_fusion(&base, &scaled, 1e-9, 1e-9)
    }

    /// Every fuser emits at most as many detections as it receives.
    pub fn output_count(models: &[PredictionSet], config: &FusionConfig) -> Check {
        let input: usize = models.iter().map(PredictionSet::num_detections).sum();
        let counts = [
            wbf_fuse(models, config)
                .map_err(|e| e.to_string())?
                .num_detections(),
            nms_fuse(models, config)
                .map_err(|e| e.to_string())?
                .num_detections(),
            soft_nms_fuse(models, config)
                .map_err(|e| e.to_string())?
                .num_detections(),
        ];
        if counts.iter().any(|&c| c > input) {
            return Err(format!("input {input}, outputs {counts:?}"));
        }
        Ok(())
    }

    /// No pair of NMS survivors overlaps at or above the threshold.
    pub fn nms_antichain(models: &[PredictionSet], threshold: f64) -> Check {
        let kept = nms(
            pooled(models).into_iter().map(|(d, _)| d).collect(),
            threshold,
        );
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                let iou = tiou(&a.segment, &b.segment);
                if iou >= threshold {
                    return Err(format!(
                        "survivors {:?} and {:?} have tIoU {iou}",
                        a.segment, b.segment
                    ));
                }
            }
        }
        Ok(())
    }
}

pub mod datasets {
    //! Random valid datasets for file-format and merge checks. Values are
    //! quantized to 1e-6, the precision of the canonical writer.

    use super::*;

    const LABEL_POOL: [&str; 8] = [
        "Run",
        "jump rope",
        "Putting something on a surface",
        "Straße",
        "cut-in",
        "zoom ✓",
        "lane change",
        "u-turn",
    ];

    fn fine(x: f64) -> f64 {
        (x * 1e6).round() / 1e6
    }

    fn fine_segment(rng: &mut impl Rng, duration: f64) -> Segment {
        loop {
            let a = fine(rng.random_range(0.0..duration));
            let b = fine(rng.random_range(0.0..duration));
            if let Ok(s) = Segment::new(a.min(b), a.max(b)) {
                return s;
            }
        }
    }

    fn random_labels(rng: &mut impl Rng, max: usize) -> Vec<String> {
        let mut pool: Vec<&str> = LABEL_POOL.to_vec();
        let n = rng.random_range(1..=max.min(pool.len()));
        let mut out = Vec::new();
        for _ in 0..n {
            out.push(
                pool.swap_remove(rng.random_range(0..pool.len()))
                    .to_string(),
            );
        }
        out
    }

    pub fn random_ground_truth(
        rng: &mut impl Rng,
        labels: Vec<String>,
        id_prefix: &str,
    ) -> GroundTruthSet {
        let num_videos = rng.random_range(0..=5);
        let mut videos = BTreeMap::new();
        for v in 0..num_videos {
            let id = format!("{id_prefix}{v}");
            let duration = fine(rng.random_range(5.0..120.0));
            let instances = (0..rng.random_range(0..=6))
                .map(|_| GroundTruthInstance {
                    video_id: id.clone(),
                    label_id: rng.random_range(0..labels.len()),
                    segment: fine_segment(rng, duration),
                })
                .collect();
            videos.insert(
                id,
                VideoAnnotations {
                    duration,
                    instances,
                },
            );
        }
        GroundTruthSet::new(LabelSpace::new(&labels).unwrap(), videos).unwrap()
    }

    /// A ground-truth set and a prediction set over its label space.
    pub fn random_files(rng: &mut impl Rng) -> (GroundTruthSet, PredictionSet) {
        let labels = random_labels(rng, 5);
        let gt = random_ground_truth(rng, labels, "vid_é");
        let weight = fine(rng.random_range(0.1..4.0));
        let mut preds =
            PredictionSet::new(format!("model {}", rng.random_range(0..100)), weight).unwrap();
        for v in 0..rng.random_range(0..=4) {
            let id = format!("clip-{v}");
            preds.results.insert(id.clone(), Vec::new());
            for _ in 0..rng.random_range(0..=6) {
                preds.push(Detection {
                    video_id: id.clone(),
                    label_id: rng.random_range(0..gt.label_space().len()),
                    segment: fine_segment(rng, 60.0),
                    score: fine(rng.random_range(0.0..=1.0)),
                    source_model: 0,
                });
            }
        }
        preds.normalize();
        (gt, preds)
    }

    /// Primary and aux datasets with partially overlapping label names, and
    /// overrides that target primary labels.
    pub fn random_merge(
        rng: &mut impl Rng,
    ) -> (GroundTruthSet, GroundTruthSet, BTreeMap<String, String>) {
        let primary_labels = random_labels(rng, 6);
        let aux_labels = random_labels(rng, 6)
            .into_iter()
            .map(|l| {
                if rng.random_bool(0.3) {
                    l.to_uppercase()
                } else {
                    l
                }
            })
            .collect::<Vec<_>>();
        let primary = random_ground_truth(rng, primary_labels.clone(), "v");
        let aux = random_ground_truth(rng, aux_labels.clone(), "v");
        let mut overrides = BTreeMap::new();
        if rng.random_bool(0.5) {
            let src = &aux_labels[rng.random_range(0..aux_labels.len())];
            let dst = &primary_labels[rng.random_range(0..primary_labels.len())];
            overrides.insert(src.clone(), dst.clone());
        }
        (primary, aux, overrides)
    }

    /// The same ground truth restricted to the given video ids.
    pub fn restrict(gt: &GroundTruthSet, ids: &[String]) -> GroundTruthSet {
        let videos = gt
            .videos()
            .iter()
            .filter(|(id, _)| ids.contains(id))
            .map(|(id, v)| (id.clone(), v.clone()))
            .collect();
        GroundTruthSet::new(gt.label_space().clone(), videos).unwrap()
    }
}
