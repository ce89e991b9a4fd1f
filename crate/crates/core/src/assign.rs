//! Anchor grids and IoU-band triage.
//!
//! An anchor's class depends only on its best IoU against the labelled
//! ground truth:
//!
//! | max IoU                    | class     |
//! |----------------------------|-----------|
//! | `> pos_iou`                | positive  |
//! | `(neg_hi, pos_iou]`        | ignored   |
//! | `[confusion_iou, neg_hi]`  | negative  |
//! | `(0, confusion_iou)`       | confusion |
//! | `0`                        | negative  |
//!
//! Zero-overlap anchors only become confusion anchors when the caller marks
//! the image as ambiguous (see [`AssignmentConfig::ambiguous_background`]).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::boxes::{iou, BBox};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignmentConfig {
    pub pos_iou: f64,
    pub neg_hi: f64,
    pub confusion_iou: f64,
    /// Treat zero-overlap anchors as confusion anchors. Off by default: far
    /// background is trusted as a true negative.
    #[serde(default)]
    pub ambiguous_background: bool,
}

impl Default for AssignmentConfig {
    fn default() -> Self {
        Self {
            pos_iou: 0.5,
            neg_hi: 0.4,
            confusion_iou: 0.1,
            ambiguous_background: false,
        }
    }
}

impl AssignmentConfig {
    pub fn with_confusion_iou(confusion_iou: f64) -> Result<Self> {
        let cfg = Self {
            confusion_iou,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.pos_iou, self.neg_hi, self.confusion_iou]
            .iter()
            .all(|v| v.is_finite())
            && 0.0 <= self.confusion_iou
            && self.confusion_iou < self.neg_hi
            && self.neg_hi < self.pos_iou
            && self.pos_iou <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "need 0 <= confusion_iou < neg_hi < pos_iou <= 1, got {} / {} / {}",
                self.confusion_iou, self.neg_hi, self.pos_iou
            )))
        }
    }

    /// Class for an anchor whose best IoU is `max_iou`.
    pub fn classify(&self, max_iou: f64) -> AnchorClass {
        if max_iou > self.pos_iou {
            AnchorClass::Positive
        } else if max_iou > self.neg_hi {
            AnchorClass::Ignored
        } else if max_iou >= self.confusion_iou {
            AnchorClass::Negative
        } else if max_iou > 0.0 || self.ambiguous_background {
            AnchorClass::Confusion
        } else {
            AnchorClass::Negative
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorClass {
    Positive,
    Negative,
    Confusion,
    Ignored,
}

impl fmt::Display for AnchorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnchorClass::Positive => "positive",
            AnchorClass::Negative => "negative",
            AnchorClass::Confusion => "confusion",
            AnchorClass::Ignored => "ignored",
        })
    }
}

impl FromStr for AnchorClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(AnchorClass::Positive),
            "negative" => Ok(AnchorClass::Negative),
            "confusion" => Ok(AnchorClass::Confusion),
            "ignored" => Ok(AnchorClass::Ignored),
            other => Err(Error::Malformed(format!("unknown anchor class tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorAssignment {
    pub anchor_index: usize,
    pub class: AnchorClass,
    /// Ground truth attaining `max_iou` (lowest index on ties); `None` when
    /// the anchor overlaps nothing.
    pub matched_gt: Option<usize>,
    pub max_iou: f64,
}

/// Dense anchors, row-major over the grid, then scale, then ratio.
///
/// Cell centres sit at `((col + 0.5) W / cols, (row + 0.5) H / rows)`; an
/// anchor of scale `s` and ratio `r` (width over height) is
/// `s sqrt(r)` wide and `s / sqrt(r)` tall, clipped to the image.
pub fn generate_anchors(
    rows: usize,
    cols: usize,
    scales: &[f64],
    ratios: &[f64],
    image_width: f64,
    image_height: f64,
) -> Result<Vec<BBox>> {
    if !(image_width.is_finite() && image_height.is_finite())
        || image_width <= 0.0
        || image_height <= 0.0
    {
        return Err(Error::InvalidConfig(format!(
            "degenerate image size {image_width} x {image_height}"
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidConfig(format!("empty anchor grid {rows} x {cols}")));
    }
    if scales.is_empty() || ratios.is_empty() {
        return Err(Error::InvalidConfig("anchor scales and ratios must be nonempty".into()));
    }
    if scales.iter().chain(ratios).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidConfig("anchor scales and ratios must be positive".into()));
    }

    let step_x = image_width / cols as f64;
    let step_y = image_height / rows as f64;
    let mut anchors = Vec::with_capacity(rows * cols * scales.len() * ratios.len());
    for r in 0..rows {
        for c in 0..cols {
            let cx = (c as f64 + 0.5) * step_x;
            let cy = (r as f64 + 0.5) * step_y;
            for &s in scales {
                for &ratio in ratios {
                    let w = s * ratio.sqrt();
                    let h = s / ratio.sqrt();
                    let anchor = BBox::from_center(cx, cy, w, h)?
                        .clip(image_width, image_height)
                        .expect("cell centre lies inside the image");
                    anchors.push(anchor);
                }
            }
        }
    }
    Ok(anchors)
}

/// Classifies every anchor by its best IoU over `gts`.
pub fn assign(anchors: &[BBox], gts: &[BBox], cfg: &AssignmentConfig) -> Vec<AnchorAssignment> {
    anchors
        .iter()
        .enumerate()
        .map(|(anchor_index, anchor)| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                let v = iou(anchor, gt);
                if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            let max_iou = best.map_or(0.0, |(_, v)| v);
            AnchorAssignment {
                anchor_index,
                class: cfg.classify(max_iou),
                matched_gt: best.map(|(g, _)| g),
                max_iou,
            }
        })
        .collect()
}

/// The hard-mining variant: confusion anchors are dropped from the loss.
pub fn ignore_confusion(assignments: &mut [AnchorAssignment]) {
    for a in assignments {
        if a.class == AnchorClass::Confusion {
            a.class = AnchorClass::Ignored;
        }
    }
}
