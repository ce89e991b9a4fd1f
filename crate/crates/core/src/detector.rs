//! Toy single-stage detector: a logistic score per anchor over fixed features,
//! trained by mini-batch gradient descent on the anchor classification loss.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::assign::{assign, AnchorAssignment, AnchorClass, AssignmentConfig};
use crate::boxes::iou;
use crate::dataset::ImageRecord;
use crate::error::{Error, Result};
use crate::eval::Detection;
use crate::loss::{batch_loss, LossConfig};
use crate::scene::{AnchorLayout, FeatureBank, FeatureSpec, OBJECT_CATEGORY};

/// Loss above which a run counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Focal loss everywhere; confusion anchors still take `confusion_weight`.
    Fl,
    Brl,
}

impl LossKind {
    /// Loss configuration actually applied: FL is BRL with `t = 0`.
    pub fn effective(self, cfg: &LossConfig) -> LossConfig {
        match self {
            LossKind::Fl => LossConfig {
                recalib_t: 0.0,
                ..*cfg
            },
            LossKind::Brl => *cfg,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Fl => "fl",
            LossKind::Brl => "brl",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fl" => Ok(LossKind::Fl),
            "brl" => Ok(LossKind::Brl),
            other => Err(Error::InvalidConfig(format!("unknown loss kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub loss: LossConfig,
    pub assignment: AssignmentConfig,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_scenes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::Brl,
            loss: LossConfig::default(),
            assignment: AssignmentConfig::default(),
            learning_rate: 0.01,
            epochs: 12,
            batch_scenes: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.assignment.validate()?;
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_scenes == 0 {
            return Err(Error::InvalidConfig("epochs and batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub features: FeatureSpec,
    pub layout: AnchorLayout,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl DetectorModel {
    /// Untrained model: small random weights and the usual rare-foreground
    /// bias prior `-ln((1 - 0.01) / 0.01)`.
    pub fn init(features: FeatureSpec, layout: AnchorLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..features.dim)
            .map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            weights,
            bias: -(99.0f64).ln(),
            features,
            layout,
        }
    }

    pub fn logit(&self, feature: &[f64]) -> f64 {
        self.weights.iter().zip(feature).map(|(w, f)| w * f).sum::<f64>() + self.bias
    }

    /// Foreground probability in (0, 1).
    pub fn score(&self, feature: &[f64]) -> f64 {
        sigmoid(self.logit(feature))
    }

    pub fn scene_scores(&self, bank: &FeatureBank, scene: usize) -> Vec<f64> {
        (0..bank.anchors.len())
            .map(|a| self.score(bank.row(scene, a)))
            .collect()
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        let (w, b) = params.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias = b[0];
    }
}

/// Anchor assignments for every scene against its non-erased annotations.
pub fn assign_corpus(bank: &FeatureBank, corpus: &[ImageRecord], cfg: &AssignmentConfig) -> Vec<Vec<AnchorAssignment>> {
    corpus
        .iter()
        .map(|rec| assign(&bank.anchors, &rec.active_boxes(), cfg))
        .collect()
}

/// Loss components of one objective evaluation, each divided by the number of
/// positives in the batch (at least one).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub positive: f64,
    pub negative: f64,
    pub confusion: f64,
}

/// Normalised batch objective and its gradient with respect to
/// `[weights..., bias]`.
pub fn objective_and_gradient(
    model: &DetectorModel,
    bank: &FeatureBank,
    assignments: &[Vec<AnchorAssignment>],
    scenes: &[usize],
    cfg: &LossConfig,
) -> Result<(LossParts, Vec<f64>)> {
    let dim = bank.dim;
    let mut grad = vec![0.0; dim + 1];
    let mut parts = LossParts::default();
    let mut positives = 0usize;
    let mut dlogits: Vec<(usize, f64)> = Vec::new();
    for &s in scenes {
        let probs: Vec<(usize, f64)> = (0..bank.anchors.len())
            .map(|a| (a, model.score(bank.row(s, a))))
            .collect();
        let b = batch_loss(&probs, &assignments[s], cfg)?;
        parts.total += b.total;
        parts.positive += b.positive;
        parts.negative += b.negative;
        parts.confusion += b.confusion;
        positives += b.num_positive;
        dlogits.clear();
        dlogits.extend(
            probs
                .iter()
                .zip(&b.grads)
                .filter(|(_, g)| **g != 0.0)
                .map(|(&(a, p), g)| (a, g * p * (1.0 - p))),
        );
        for &(a, dz) in &dlogits {
            for (gw, f) in grad[..dim].iter_mut().zip(bank.row(s, a)) {
                *gw += dz * f;
            }
            grad[dim] += dz;
        }
    }
    let norm = positives.max(1) as f64;
    parts.total /= norm;
    parts.positive /= norm;
    parts.negative /= norm;
    parts.confusion /= norm;
    for g in &mut grad {
        *g /= norm;
    }
    Ok((parts, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub total_loss: f64,
    pub pos_loss: f64,
    pub neg_loss: f64,
    pub confusion_loss: f64,
}

pub fn trace_tsv(trace: &[EpochTrace]) -> String {
    let mut s = String::from("epoch\ttotal_loss\tpos_loss\tneg_loss\tconfusion_loss\n");
    for t in trace {
        s.push_str(&format!(
            "{}\t{:.9}\t{:.9}\t{:.9}\t{:.9}\n",
            t.epoch, t.total_loss, t.pos_loss, t.neg_loss, t.confusion_loss
        ));
    }
    s
}

/// Trains from `init` over the scenes of `bank`, labelled by `corpus`
/// (aligned index by index). Batch order is reshuffled every epoch from
/// `tc.seed`. Each entry of the trace averages the batch objectives of one
/// epoch.
pub fn train_from(
    init: DetectorModel,
    bank: &FeatureBank,
    corpus: &[ImageRecord],
    tc: &TrainConfig,
) -> Result<(DetectorModel, Vec<EpochTrace>)> {
    tc.validate()?;
    if corpus.len() != bank.scenes.len() {
        return Err(Error::LengthMismatch {
            predictions: bank.scenes.len(),
            assignments: corpus.len(),
        });
    }
    let cfg = tc.loss_kind.effective(&tc.loss);
    let assignments = assign_corpus(bank, corpus, &tc.assignment);
    let mut model = init;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut trace = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossParts::default();
        let mut batches = 0usize;
        for batch in order.chunks(tc.batch_scenes) {
            // The config was validated, so a domain error here means the
            // weights overflowed the scores.
            let (parts, grad) = objective_and_gradient(&model, bank, &assignments, batch, &cfg).map_err(|e| match e {
                Error::Domain(_) => Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            if !parts.total.is_finite() || parts.total > DIVERGENCE_LIMIT {
                return Err(Error::Diverged {
                    epoch,
                    loss: parts.total,
                });
            }
            let mut params = model.parameters();
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= tc.learning_rate * g;
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                });
            }
            model.set_parameters(&params);
            sum.total += parts.total;
            sum.positive += parts.positive;
            sum.negative += parts.negative;
            sum.confusion += parts.confusion;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        trace.push(EpochTrace {
            epoch,
            total_loss: sum.total / n,
            pos_loss: sum.positive / n,
            neg_loss: sum.negative / n,
            confusion_loss: sum.confusion / n,
        });
    }
    Ok((model, trace))
}

/// [`train_from`] starting at [`DetectorModel::init`] seeded by `tc.seed`.
pub fn train(
    bank: &FeatureBank,
    corpus: &[ImageRecord],
    features: &FeatureSpec,
    layout: &AnchorLayout,
    tc: &TrainConfig,
) -> Result<(DetectorModel, Vec<EpochTrace>)> {
    let init = DetectorModel::init(features.clone(), layout.clone(), tc.seed);
    train_from(init, bank, corpus, tc)
}

/// Greedy NMS over `(anchor index, score)` pairs. Highest score first, ties
/// by lower anchor index; a box is dropped when its IoU with a kept box
/// exceeds `iou_thr`. Returns the kept pairs in that order.
pub fn nms(bank_anchors: &[crate::boxes::BBox], mut scored: Vec<(usize, f64)>, iou_thr: f64, max_keep: usize) -> Vec<(usize, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut kept: Vec<(usize, f64)> = Vec::new();
    for (a, s) in scored {
        if kept.len() >= max_keep {
            break;
        }
        let clear = kept
            .iter()
            .all(|&(k, _)| iou(&bank_anchors[k], &bank_anchors[a]) <= iou_thr);
        if clear {
            kept.push((a, s));
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    /// Detections need a score strictly above this.
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.05,
            nms_iou: 0.5,
            max_detections: 100,
        }
    }
}

/// Scored, thresholded and suppressed detections for one scene, in
/// descending score order.
pub fn predict(model: &DetectorModel, bank: &FeatureBank, scene: usize, image_id: &str, pc: &PredictConfig) -> Vec<Detection> {
    let scored: Vec<(usize, f64)> = model
        .scene_scores(bank, scene)
        .into_iter()
        .enumerate()
        .filter(|&(_, s)| s > pc.score_threshold)
        .collect();
    nms(&bank.anchors, scored, pc.nms_iou, pc.max_detections)
        .into_iter()
        .map(|(a, score)| Detection {
            image_id: image_id.to_string(),
            category: OBJECT_CATEGORY,
            score,
            bbox: bank.anchors[a],
        })
        .collect()
}

/// Detections for every scene of `bank`, whose ids come from `corpus`.
pub fn predict_corpus(model: &DetectorModel, bank: &FeatureBank, corpus: &[ImageRecord], pc: &PredictConfig) -> Vec<Detection> {
    corpus
        .iter()
        .enumerate()
        .flat_map(|(i, rec)| predict(model, bank, i, &rec.image_id, pc))
        .collect()
}

/// Accuracy over positive and negative/confusion anchors (ignored excluded),
/// with a 0.5 cut on the foreground score.
pub fn anchor_accuracy(model: &DetectorModel, bank: &FeatureBank, assignments: &[Vec<AnchorAssignment>]) -> f64 {
    let mut right = 0usize;
    let mut total = 0usize;
    for (s, scene) in assignments.iter().enumerate() {
        for a in scene {
            let fg = model.score(bank.row(s, a.anchor_index)) > 0.5;
            match a.class {
                AnchorClass::Ignored => continue,
                AnchorClass::Positive => right += usize::from(fg),
                _ => right += usize::from(!fg),
            }
            total += 1;
        }
    }
    if total == 0 {
        1.0
    } else {
        right as f64 / total as f64
    }
}
