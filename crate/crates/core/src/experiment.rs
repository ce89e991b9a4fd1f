//! Curate -> train -> evaluate over a grid of (curation mode, loss) cells.
//!
//! Training scenes are corrupted per cell; evaluation always uses a separate,
//! uncurated test split.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assign::AssignmentConfig;
use crate::curation::{curate, CurationMode};
use crate::dataset::ImageRecord;
use crate::detector::{predict_corpus, train, LossKind, PredictConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{coco_thresholds, evaluate, ApResult};
use crate::loss::LossConfig;
use crate::scene::{generate_scenes, AnchorLayout, FeatureBank, FeatureSpec, SceneConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub train_scenes: SceneConfig,
    pub test_scenes: SceneConfig,
    pub features: FeatureSpec,
    pub layout: AnchorLayout,
    pub predict: PredictConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            train_scenes: SceneConfig {
                num_scenes: 500,
                seed: 1,
                id_prefix: "train".into(),
                ..SceneConfig::default()
            },
            test_scenes: SceneConfig {
                num_scenes: 200,
                seed: 2,
                id_prefix: "test".into(),
                ..SceneConfig::default()
            },
            features: FeatureSpec::default(),
            layout: AnchorLayout::default(),
            predict: PredictConfig::default(),
        }
    }
}

/// Scenes and features for both splits, built once per benchmark.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub config: BenchConfig,
    pub train: Vec<ImageRecord>,
    pub test: Vec<ImageRecord>,
    pub train_bank: FeatureBank,
    pub test_bank: FeatureBank,
}

impl Benchmark {
    pub fn build(config: BenchConfig) -> Result<Self> {
        let train = generate_scenes(&config.train_scenes)?;
        let test = generate_scenes(&config.test_scenes)?;
        Self::from_scenes(config, train, test)
    }

    pub fn from_scenes(config: BenchConfig, train: Vec<ImageRecord>, test: Vec<ImageRecord>) -> Result<Self> {
        let train_bank = FeatureBank::build(&train, &config.layout, &config.features)?;
        let test_bank = FeatureBank::build(&test, &config.layout, &config.features)?;
        Ok(Self {
            config,
            train,
            test,
            train_bank,
            test_bank,
        })
    }

    /// Trains on `labels` (the training scenes, possibly curated) and
    /// evaluates on the clean test split.
    pub fn train_and_evaluate(&self, labels: &[ImageRecord], tc: &TrainConfig) -> Result<ApResult> {
        let (model, _) = train(&self.train_bank, labels, &self.config.features, &self.config.layout, tc)?;
        let dets = predict_corpus(&model, &self.test_bank, &self.test, &self.config.predict);
        evaluate(&dets, &self.test, &coco_thresholds())
    }

    pub fn run_cell(&self, cell: &CellSpec, base: &TrainConfig, curation_seed: u64) -> CellResult {
        let outcome = curate(&self.train, cell.mode, curation_seed).and_then(|(labels, _)| {
            let tc = TrainConfig {
                loss_kind: cell.loss_kind,
                loss: cell.loss,
                assignment: cell.assignment,
                ..base.clone()
            };
            self.train_and_evaluate(&labels, &tc)
        });
        let outcome = match outcome {
            Ok(r) => CellOutcome::Done {
                map50: r.map50.unwrap_or(0.0),
                map75: r.map75.unwrap_or(0.0),
                map_coco: r.map_coco.unwrap_or(0.0),
                per_iou: r.per_iou_map,
            },
            Err(Error::Diverged { epoch, .. }) => CellOutcome::Diverged { epoch },
            Err(e) => CellOutcome::Failed(e.to_string()),
        };
        CellResult {
            cell: cell.clone(),
            seed: base.seed,
            curation_seed,
            outcome,
        }
    }

    /// Runs every cell, in parallel, returning results in cell order.
    pub fn run(&self, cells: &[CellSpec], base: &TrainConfig, curation_seed: u64) -> Vec<CellResult> {
        cells
            .par_iter()
            .map(|c| self.run_cell(c, base, curation_seed))
            .collect()
    }
}

/// Banding used by benchmark cells. Training labels are known to be
/// incomplete here, so anchors touching no labeled object are confusion
/// candidates too.
pub fn bench_assignment() -> AssignmentConfig {
    AssignmentConfig {
        ambiguous_background: true,
        ..AssignmentConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub mode: CurationMode,
    pub loss_kind: LossKind,
    pub loss: LossConfig,
    pub assignment: AssignmentConfig,
}

impl CellSpec {
    /// Plain focal-loss baseline: every anchor weighted equally.
    pub fn fl_baseline(mode: CurationMode) -> Self {
        Self {
            mode,
            loss_kind: LossKind::Fl,
            loss: LossConfig {
                confusion_weight: 1.0,
                ..LossConfig::default()
            },
            assignment: bench_assignment(),
        }
    }

    /// BRL at the default `t = 0.5`, confusion weight 0.1.
    pub fn brl_default(mode: CurationMode) -> Self {
        Self {
            mode,
            loss_kind: LossKind::Brl,
            loss: LossConfig::default(),
            assignment: bench_assignment(),
        }
    }
}

/// The standard matrix: every mode with the FL baseline and default BRL.
pub fn standard_matrix(modes: &[CurationMode]) -> Vec<CellSpec> {
    modes
        .iter()
        .flat_map(|&m| [CellSpec::fl_baseline(m), CellSpec::brl_default(m)])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CellOutcome {
    Done {
        map50: f64,
        map75: f64,
        map_coco: f64,
        per_iou: Vec<f64>,
    },
    Diverged {
        epoch: usize,
    },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: CellSpec,
    pub seed: u64,
    pub curation_seed: u64,
    pub outcome: CellOutcome,
}

impl CellResult {
    pub fn map50(&self) -> Option<f64> {
        match self.outcome {
            CellOutcome::Done { map50, .. } => Some(map50),
            _ => None,
        }
    }

    pub fn csv_row(&self) -> String {
        let c = &self.cell;
        let (metrics, status) = match &self.outcome {
            CellOutcome::Done {
                map50,
                map75,
                map_coco,
                ..
            } => (format!("{map50:.6},{map75:.6},{map_coco:.6}"), "ok".to_string()),
            CellOutcome::Diverged { epoch } => (",,".into(), format!("diverged@{epoch}")),
            CellOutcome::Failed(msg) => (",,".into(), format!("failed: {}", msg.replace(',', ";"))),
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            c.mode,
            c.loss_kind,
            c.loss_kind.effective(&c.loss).recalib_t,
            c.loss.confusion_weight,
            c.assignment.confusion_iou,
            self.seed,
            metrics,
            status
        )
    }
}

pub const RESULTS_HEADER: &str =
    "mode,loss_kind,t,confusion_weight,confusion_iou,seed,mAP50,mAP75,mAP_coco,status";

pub fn results_csv(results: &[CellResult]) -> String {
    let mut s = format!("{RESULTS_HEADER}\n");
    for r in results {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}
