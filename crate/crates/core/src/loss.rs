//! Focal loss and the background recalibration loss (BRL).
//!
//! Both losses are written in terms of `p_t`, the model's confidence in the
//! class an anchor was assigned: the foreground probability for positives and
//! one minus it for negative and confusion anchors. BRL keeps the focal form
//! while `p_t > t` and switches to the mirrored positive branch
//! `-alpha_t * p_t^gamma * ln(1 - p_t)` otherwise. Below `t` the loss is
//! increasing in `p_t`, so a background-labelled anchor the classifier already
//! scores as foreground is pushed further towards foreground.

use serde::{Deserialize, Serialize};

use crate::assign::{AnchorAssignment, AnchorClass};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha_t: f64,
    pub gamma: f64,
    pub recalib_t: f64,
    pub confusion_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha_t: 0.5,
            gamma: 2.0,
            recalib_t: 0.5,
            confusion_weight: 0.1,
        }
    }
}

impl LossConfig {
    pub fn new(alpha_t: f64, gamma: f64, recalib_t: f64, confusion_weight: f64) -> Result<Self> {
        let cfg = Self {
            alpha_t,
            gamma,
            recalib_t,
            confusion_weight,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha_t", self.alpha_t),
            ("gamma", self.gamma),
            ("recalib_t", self.recalib_t),
            ("confusion_weight", self.confusion_weight),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::Domain(format!("{name} is not finite ({v})")));
            }
        }
        if !(self.alpha_t > 0.0 && self.alpha_t <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha_t must lie in (0, 1], got {}",
                self.alpha_t
            )));
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if !(0.0..1.0).contains(&self.recalib_t) {
            return Err(Error::InvalidConfig(format!(
                "recalib_t must lie in [0, 1), got {}",
                self.recalib_t
            )));
        }
        if !(0.0..=1.0).contains(&self.confusion_weight) {
            return Err(Error::InvalidConfig(format!(
                "confusion_weight must lie in [0, 1], got {}",
                self.confusion_weight
            )));
        }
        Ok(())
    }

    /// Size of the step BRL takes at `p_t = t`: mirrored branch value minus
    /// focal branch value, `alpha_t [t^g ln(1/(1-t)) - (1-t)^g ln(1/t)]`.
    /// Zero only at `t = 0.5` (and meaningless at `t = 0`, where the mirrored
    /// branch is never reached).
    pub fn brl_jump(&self) -> f64 {
        let t = self.recalib_t.max(PROB_EPS);
        self.alpha_t
            * (t.powf(self.gamma) * (1.0 / (1.0 - t)).ln()
                - (1.0 - t).powf(self.gamma) * (1.0 / t).ln())
    }
}

/// Confidence in the assigned class, clamped away from 0 and 1.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct AnchorProbability(f64);

impl AnchorProbability {
    pub fn new(p_t: f64) -> Result<Self> {
        if !p_t.is_finite() {
            return Err(Error::Domain(format!("p_t is not finite ({p_t})")));
        }
        Ok(Self(p_t.clamp(PROB_EPS, 1.0 - PROB_EPS)))
    }

    /// `p_t` for an anchor of the given class from a foreground probability.
    /// Ignored anchors use the background convention; their loss is zero anyway.
    pub fn from_foreground(p: f64, class: AnchorClass) -> Result<Self> {
        match class {
            AnchorClass::Positive => Self::new(p),
            _ => Self::new(1.0 - p),
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Which one-sided derivative to take at the BRL breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Limit from `p_t < t` (the mirrored branch).
    Below,
    /// Limit from `p_t > t` (the focal branch).
    Above,
}

fn focal_value(p: f64, cfg: &LossConfig) -> f64 {
    -cfg.alpha_t * (1.0 - p).powf(cfg.gamma) * p.ln()
}

fn mirrored_value(p: f64, cfg: &LossConfig) -> f64 {
    -cfg.alpha_t * p.powf(cfg.gamma) * (-p).ln_1p()
}

fn focal_derivative(p: f64, cfg: &LossConfig) -> f64 {
    let g = cfg.gamma;
    // gamma * (1-p)^(gamma-1) vanishes identically for gamma = 0.
    let shrink = if g == 0.0 { 0.0 } else { g * (1.0 - p).powf(g - 1.0) * p.ln() };
    cfg.alpha_t * (shrink - (1.0 - p).powf(g) / p)
}

fn mirrored_derivative(p: f64, cfg: &LossConfig) -> f64 {
    let g = cfg.gamma;
    let shrink = if g == 0.0 { 0.0 } else { -g * p.powf(g - 1.0) * (-p).ln_1p() };
    cfg.alpha_t * (shrink + p.powf(g) / (1.0 - p))
}

/// `-alpha_t (1 - p_t)^gamma ln(p_t)`.
pub fn focal_loss(p_t: AnchorProbability, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(focal_value(p_t.value(), cfg))
}

/// Focal branch while `p_t > t`, mirrored positive branch otherwise.
pub fn brl_loss(p_t: AnchorProbability, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let p = p_t.value();
    if p > cfg.recalib_t {
        Ok(focal_value(p, cfg))
    } else {
        Ok(mirrored_value(p, cfg))
    }
}

/// d(focal_loss)/d(p_t); negative everywhere on (0, 1).
pub fn focal_grad(p_t: AnchorProbability, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(focal_derivative(p_t.value(), cfg))
}

/// d(brl_loss)/d(p_t). Fails at `p_t == t`; use [`brl_grad_sided`] there.
pub fn brl_grad(p_t: AnchorProbability, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let p = p_t.value();
    if p == cfg.recalib_t {
        return Err(Error::AtBreakpoint { p_t: p });
    }
    Ok(if p > cfg.recalib_t {
        focal_derivative(p, cfg)
    } else {
        mirrored_derivative(p, cfg)
    })
}

/// Like [`brl_grad`] but resolves the breakpoint with the requested side.
pub fn brl_grad_sided(p_t: AnchorProbability, cfg: &LossConfig, side: Side) -> Result<f64> {
    cfg.validate()?;
    let p = p_t.value();
    let use_focal = if p == cfg.recalib_t {
        side == Side::Above
    } else {
        p > cfg.recalib_t
    };
    Ok(if use_focal {
        focal_derivative(p, cfg)
    } else {
        mirrored_derivative(p, cfg)
    })
}

/// Loss summed over one batch of anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    /// Unnormalised sum over all anchors.
    pub total: f64,
    pub positive: f64,
    pub negative: f64,
    pub confusion: f64,
    pub num_positive: usize,
    /// d(total)/d(p) per anchor, with `p` the raw foreground probability.
    /// Zero where `p` was clamped.
    pub grads: Vec<f64>,
}

impl BatchLoss {
    /// `max(1, #positives)`, the usual per-positive normaliser.
    pub fn normalizer(&self) -> f64 {
        self.num_positive.max(1) as f64
    }
}

/// Applies focal loss to positives and negatives, `confusion_weight * BRL`
/// to confusion anchors and nothing to ignored anchors.
///
/// `predictions` holds `(anchor index, foreground probability)` pairs aligned
/// one-to-one with `assignments`. At the exact breakpoint the mirrored branch
/// is used for the value, so its derivative (the `Below` side) is used too.
pub fn batch_loss(
    predictions: &[(usize, f64)],
    assignments: &[AnchorAssignment],
    cfg: &LossConfig,
) -> Result<BatchLoss> {
    cfg.validate()?;
    if predictions.len() != assignments.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            assignments: assignments.len(),
        });
    }
    let mut out = BatchLoss {
        total: 0.0,
        positive: 0.0,
        negative: 0.0,
        confusion: 0.0,
        num_positive: 0,
        grads: Vec::with_capacity(predictions.len()),
    };
    for (&(index, p), a) in predictions.iter().zip(assignments) {
        if index != a.anchor_index {
            return Err(Error::Misaligned {
                prediction: index,
                assignment: a.anchor_index,
            });
        }
        if !p.is_finite() {
            return Err(Error::Domain(format!(
                "foreground probability for anchor {index} is not finite ({p})"
            )));
        }
        let clamped = !(PROB_EPS..=1.0 - PROB_EPS).contains(&p);
        let p_t = AnchorProbability::from_foreground(p, a.class)?;
        let (loss, dloss_dpt) = match a.class {
            AnchorClass::Ignored => (0.0, 0.0),
            AnchorClass::Positive | AnchorClass::Negative => {
                (focal_value(p_t.0, cfg), focal_derivative(p_t.0, cfg))
            }
            AnchorClass::Confusion => {
                let w = cfg.confusion_weight;
                let v = brl_loss(p_t, cfg)?;
                let d = brl_grad_sided(p_t, cfg, Side::Below)?;
                (w * v, w * d)
            }
        };
        let dpt_dp = match a.class {
            AnchorClass::Positive => 1.0,
            _ => -1.0,
        };
        out.grads.push(if clamped { 0.0 } else { dloss_dpt * dpt_dp });
        out.total += loss;
        match a.class {
            AnchorClass::Positive => {
                out.positive += loss;
                out.num_positive += 1;
            }
            AnchorClass::Negative => out.negative += loss,
            AnchorClass::Confusion => out.confusion += loss,
            AnchorClass::Ignored => {}
        }
    }
    Ok(out)
}
