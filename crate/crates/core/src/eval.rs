//! Average precision over IoU thresholds.
//!
//! AP is the area under the precision envelope (precision made
//! monotonically non-increasing in recall), summed over every recall step.
//! No 11- or 101-point sampling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::boxes::{iou, BBox};
use crate::dataset::ImageRecord;
use crate::error::{Error, Result};

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub category: u32,
    pub score: f64,
    #[serde(flatten)]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// `(recall, precision)` after each detection, in score order.
    pub points: Vec<(f64, f64)>,
    /// Input positions of the detections in the order that produced `points`.
    pub order: Vec<usize>,
}

/// Stable descending-score order; ties keep insertion order.
pub fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Greedy TP/FP flags, aligned with the input order of `dets`.
///
/// In descending score order each detection takes the still-unmatched ground
/// truth of its image and category with the highest IoU (lowest index on
/// ties), provided that IoU is at least `iou_thr`. Anything else is a false
/// positive.
pub fn match_detections(dets: &[Detection], gts: &[ImageRecord], iou_thr: f64) -> Vec<bool> {
    let by_image: HashMap<&str, &ImageRecord> =
        gts.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let mut taken: HashMap<&str, Vec<bool>> = HashMap::new();
    let mut flags = vec![false; dets.len()];
    for i in score_order(dets) {
        let det = &dets[i];
        let Some(rec) = by_image.get(det.image_id.as_str()) else {
            continue;
        };
        let used = taken
            .entry(rec.image_id.as_str())
            .or_insert_with(|| vec![false; rec.annotations.len()]);
        let mut best: Option<(usize, f64)> = None;
        for (g, ann) in rec.annotations.iter().enumerate() {
            if ann.erased || ann.category != det.category || used[g] {
                continue;
            }
            let v = iou(&det.bbox, &ann.bbox);
            if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            used[g] = true;
            flags[i] = true;
        }
    }
    flags
}

/// Precision/recall after each detection. `flags` must be in score order.
pub fn pr_curve(flags: &[bool], num_gt: usize) -> PrCurve {
    let mut tp = 0usize;
    let points = flags
        .iter()
        .enumerate()
        .map(|(k, &hit)| {
            tp += usize::from(hit);
            let recall = if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 };
            (recall, tp as f64 / (k + 1) as f64)
        })
        .collect();
    PrCurve {
        points,
        order: (0..flags.len()).collect(),
    }
}

/// AP from score-ordered TP flags. `None` when the class has neither ground
/// truth nor detections; `Some(0.0)` when it has detections but no ground
/// truth.
pub fn average_precision(flags: &[bool], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return if flags.is_empty() { None } else { Some(0.0) };
    }
    let curve = pr_curve(flags, num_gt);
    // Envelope: best precision at this or any later rank.
    let mut envelope = vec![0.0; curve.points.len()];
    let mut running = 0.0f64;
    for (k, &(_, p)) in curve.points.iter().enumerate().rev() {
        running = running.max(p);
        envelope[k] = running;
    }
    // Each true positive adds 1/num_gt recall; divide once at the end so a
    // perfect ranking gives exactly 1.
    let area: f64 = flags
        .iter()
        .zip(&envelope)
        .filter(|(hit, _)| **hit)
        .map(|(_, p)| p)
        .sum();
    let ap = area / num_gt as f64;
    Some(ap.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub thresholds: Vec<f64>,
    /// Category -> AP at each threshold (`None` when undefined).
    pub per_class: BTreeMap<u32, Vec<Option<f64>>>,
    /// Mean over classes with a defined AP, one entry per threshold.
    pub per_iou_map: Vec<f64>,
    pub map50: Option<f64>,
    pub map75: Option<f64>,
    /// Mean of `per_iou_map` when the thresholds are the ten COCO ones.
    pub map_coco: Option<f64>,
}

impl ApResult {
    pub fn map_at(&self, thr: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|t| (t - thr).abs() < 1e-9)
            .map(|i| self.per_iou_map[i])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("scope,iou,ap\n");
        for (cat, aps) in &self.per_class {
            for (thr, ap) in self.thresholds.iter().zip(aps) {
                if let Some(ap) = ap {
                    s.push_str(&format!("{cat},{thr:.2},{ap:.6}\n"));
                }
            }
        }
        for (thr, m) in self.thresholds.iter().zip(&self.per_iou_map) {
            s.push_str(&format!("mean,{thr:.2},{m:.6}\n"));
        }
        if let Some(m) = self.map_coco {
            s.push_str(&format!("mean,0.50:0.95,{m:.6}\n"));
        }
        s
    }

    pub fn per_iou_tsv(&self) -> String {
        let mut s = String::from("iou\tmap\n");
        for (thr, m) in self.thresholds.iter().zip(&self.per_iou_map) {
            s.push_str(&format!("{thr:.2}\t{m:.6}\n"));
        }
        s
    }
}

/// Per-class AP at every threshold plus the class-mean aggregates.
pub fn evaluate(dets: &[Detection], gts: &[ImageRecord], thresholds: &[f64]) -> Result<ApResult> {
    if gts.iter().all(|r| r.active().next().is_none()) {
        return Err(Error::NoGroundTruth);
    }
    if thresholds.is_empty() {
        return Err(Error::InvalidConfig("no IoU thresholds".into()));
    }
    if let Some(d) = dets.iter().find(|d| !d.score.is_finite()) {
        return Err(Error::Domain(format!(
            "detection on {} has score {}",
            d.image_id, d.score
        )));
    }

    let mut classes: BTreeSet<u32> = dets.iter().map(|d| d.category).collect();
    let mut num_gt: BTreeMap<u32, usize> = BTreeMap::new();
    for ann in gts.iter().flat_map(|r| r.active()) {
        classes.insert(ann.category);
        *num_gt.entry(ann.category).or_default() += 1;
    }

    let mut per_class: BTreeMap<u32, Vec<Option<f64>>> = BTreeMap::new();
    for &cat in &classes {
        let class_dets: Vec<Detection> = dets.iter().filter(|d| d.category == cat).cloned().collect();
        let order = score_order(&class_dets);
        let n = num_gt.get(&cat).copied().unwrap_or(0);
        let aps = thresholds
            .iter()
            .map(|&thr| {
                let flags = match_detections(&class_dets, gts, thr);
                let ordered: Vec<bool> = order.iter().map(|&i| flags[i]).collect();
                average_precision(&ordered, n)
            })
            .collect();
        per_class.insert(cat, aps);
    }

    let per_iou_map: Vec<f64> = (0..thresholds.len())
        .map(|k| {
            let defined: Vec<f64> = per_class.values().filter_map(|aps| aps[k]).collect();
            if defined.is_empty() {
                0.0
            } else {
                defined.iter().sum::<f64>() / defined.len() as f64 + 0.0
            }
        })
        .collect();

    let coco = coco_thresholds();
    let is_coco = thresholds.len() == coco.len()
        && thresholds.iter().zip(&coco).all(|(a, b)| (a - b).abs() < 1e-9);
    let mut result = ApResult {
        thresholds: thresholds.to_vec(),
        per_class,
        map_coco: is_coco.then(|| per_iou_map.iter().sum::<f64>() / per_iou_map.len() as f64),
        per_iou_map,
        map50: None,
        map75: None,
    };
    result.map50 = result.map_at(0.5);
    result.map75 = result.map_at(0.75);
    Ok(result)
}

/// Reads a detections CSV (`image_id,category,score,x1,y1,x2,y2`); a header
/// line starting with `image_id` is skipped.
pub fn read_detections<R: BufRead>(reader: R) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with("image_id") {
            continue;
        }
        let bad = |what: &str| Error::Malformed(format!("detections line {}: {what}", lineno + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(bad("expected 7 fields"));
        }
        let num = |i: usize| fields[i].parse::<f64>().map_err(|e| bad(&e.to_string()));
        let category = fields[1].parse::<u32>().map_err(|e| bad(&e.to_string()))?;
        let score = num(2)?;
        if !score.is_finite() {
            return Err(bad("non-finite score"));
        }
        out.push(Detection {
            image_id: fields[0].to_string(),
            category,
            score,
            bbox: BBox::new(num(3)?, num(4)?, num(5)?, num(6)?)?,
        });
    }
    Ok(out)
}

pub fn write_detections<W: Write>(dets: &[Detection], mut w: W) -> Result<()> {
    writeln!(w, "image_id,category,score,x1,y1,x2,y2")?;
    for d in dets {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            d.image_id, d.category, d.score, d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2
        )?;
    }
    w.flush()?;
    Ok(())
}
