//! Background recalibration loss for detectors trained on incompletely
//! annotated data, plus the machinery around it: IoU-band anchor triage,
//! annotation-erasure curation, a toy single-stage detector and AP evaluation.

pub mod assign;
pub mod boxes;
pub mod curation;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod loss;
pub mod scene;

pub use assign::{assign, generate_anchors, AnchorAssignment, AnchorClass, AssignmentConfig};
pub use boxes::{iou, BBox};
pub use curation::{curate, CurationMode};
pub use dataset::{corpus_stats, Annotation, CurationReport, ImageRecord};
pub use detector::{predict, train, DetectorModel, EpochTrace, LossKind, PredictConfig, TrainConfig};
pub use error::{Error, Result};
pub use eval::{average_precision, evaluate, match_detections, ApResult, Detection, PrCurve};
pub use experiment::{BenchConfig, Benchmark, CellResult, CellSpec};
pub use loss::{
    batch_loss, brl_grad, brl_loss, focal_grad, focal_loss, AnchorProbability, BatchLoss, LossConfig, Side,
    PROB_EPS,
};
pub use scene::{generate_scenes, AnchorLayout, FeatureBank, FeatureSpec, SceneConfig};
