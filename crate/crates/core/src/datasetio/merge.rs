use std::collections::BTreeMap;

use log::warn;
use serde::Serialize;

use crate::domain::{
    canonicalize_label, GroundTruthInstance, GroundTruthSet, LabelSpace, VideoAnnotations,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ExactMatch,
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappingEntry {
    /// Target label name as spelled in the target space.
    pub target: String,
    pub provenance: Provenance,
}

/// Source label (canonical form) to target label. Many-to-one is allowed.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LabelMapping {
    pub entries: BTreeMap<String, MappingEntry>,
}

impl LabelMapping {
    pub fn target_of(&self, source_name: &str) -> Option<&MappingEntry> {
        self.entries.get(&canonicalize_label(source_name))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Maps each source label through an override if one exists, otherwise
/// through an exact canonical-name match. Returns the mapping and the source
/// labels left unmapped.
pub fn build_label_mapping(
    source: &LabelSpace,
    target: &LabelSpace,
    overrides: &BTreeMap<String, String>,
) -> Result<(LabelMapping, Vec<String>)> {
    let mut resolved_overrides = BTreeMap::new();
    for (src, dst) in overrides {
        let target_id = target.id_of(dst).ok_or_else(|| Error::BadOverrideTarget {
            source_label: src.clone(),
            target: dst.clone(),
        })?;
        if source.id_of(src).is_none() {
            warn!("override for {src:?} does not match any source label");
        }
        resolved_overrides.insert(canonicalize_label(src), target_id);
    }

    let mut mapping = LabelMapping::default();
    let mut unmapped = Vec::new();
    for name in source.names() {
        let key = canonicalize_label(name);
        let (target_id, provenance) = match resolved_overrides.get(&key) {
            Some(&id) => (id, Provenance::Override),
            None => match target.id_of(name) {
                Some(id) => (id, Provenance::ExactMatch),
                None => {
                    unmapped.push(name.clone());
                    continue;
                }
            },
        };
        mapping.entries.insert(
            key,
            MappingEntry {
                target: target.name(target_id).unwrap_or_default().to_string(),
                provenance,
            },
        );
    }
    Ok((mapping, unmapped))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MergeReport {
    pub instances_added: usize,
    /// Number of mapping entries.
    pub labels_mapped: usize,
    /// Unmapped source labels with the number of instances dropped for each.
    pub labels_dropped: Vec<(String, usize)>,
    pub videos_added: usize,
}

/// Appends the mapped instances of `aux` to `primary` under
/// `"<prefix>/<video id>"`.
///
/// The primary label space and annotations are left untouched; aux videos
/// that end up without any mapped instance are not added.
pub fn merge_datasets(
    primary: &GroundTruthSet,
    aux: &GroundTruthSet,
    mapping: &LabelMapping,
    prefix: &str,
) -> Result<(GroundTruthSet, MergeReport)> {
    let primary_space = primary.label_space();
    let aux_space = aux.label_space();

    // aux label id -> primary label id
    let mut relabel: Vec<Option<usize>> = Vec::with_capacity(aux_space.len());
    for name in aux_space.names() {
        relabel.push(match mapping.target_of(name) {
            Some(entry) => Some(primary_space.id_of(&entry.target).ok_or_else(|| {
                Error::BadOverrideTarget {
                    source_label: name.clone(),
                    target: entry.target.clone(),
                }
            })?),
            None => None,
        });
    }

    let mut videos = primary.videos().clone();
    let mut report = MergeReport {
        labels_mapped: mapping.len(),
        ..MergeReport::default()
    };
    let mut dropped: BTreeMap<String, usize> = BTreeMap::new();

    for (aux_id, video) in aux.videos() {
        let new_id = format!("{prefix}/{aux_id}");
        if videos.contains_key(&new_id) {
            return Err(Error::VideoIdCollision(new_id));
        }
        let mut instances = Vec::new();
        for inst in &video.instances {
            match relabel[inst.label_id] {
                Some(label_id) => instances.push(GroundTruthInstance {
                    video_id: new_id.clone(),
                    label_id,
                    segment: inst.segment,
                }),
                None => {
                    let name = aux_space
                        .name(inst.label_id)
                        .unwrap_or_default()
                        .to_string();
                    *dropped.entry(name).or_default() += 1;
                }
            }
        }
        if !instances.is_empty() {
            report.instances_added += instances.len();
            report.videos_added += 1;
            videos.insert(
                new_id,
                VideoAnnotations {
                    duration: video.duration,
                    instances,
                },
            );
        }
    }
    report.labels_dropped = dropped.into_iter().collect();

    let merged = GroundTruthSet::new(primary_space.clone(), videos)?;
    Ok((merged, report))
}
