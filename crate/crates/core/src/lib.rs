//! Fusion and evaluation tooling for temporal action localisation.
//!
//! - [`domain`]: segments, detections, label spaces and the tIoU measure.
//! - [`fusion`]: weighted box fusion over time intervals, NMS and Soft-NMS.
//! - [`eval`]: class-averaged mAP over tIoU thresholds.
//! - [`datasetio`]: file formats, label mapping and dataset merging.
//! - [`simulator`]: seeded synthetic ensembles.
//! - [`cli`]: the `talfuse` command-line tool.

pub mod cli;
pub mod datasetio;
pub mod domain;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod simulator;

pub use domain::{
    tiou, validate_detection, Detection, GroundTruthInstance, GroundTruthSet, LabelSpace,
    PredictionSet, Segment, VideoAnnotations, Violation,
};
pub use error::{Error, Result};
