//! Synthetic scenes and the fixed random feature extractor.
//!
//! A scene is an [`ImageRecord`] whose annotations are the latent objects.
//! Each anchor is described by how much object it contains:
//!
//! * `overlap`: best IoU with any object,
//! * `fill`: largest fraction of the anchor covered by a single object,
//! * `capture`: largest fraction of a single object inside the anchor.
//!
//! Features are a fixed random projection of that descriptor, plus the
//! appearance vector of the best-overlapping object scaled by that overlap,
//! plus isotropic Gaussian noise. Appearance vectors are drawn once per
//! object, so all anchors on one object share them. Features always use every
//! object in the record, erased or not: erasing a label does not change the
//! image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::assign::generate_anchors;
use crate::boxes::{iou, BBox};
use crate::curation::image_rng;
use crate::dataset::{Annotation, ImageRecord};
use crate::error::{Error, Result};

/// Length of the per-anchor content descriptor (three overlap cues + bias).
pub const DESCRIPTOR_LEN: usize = 4;

/// Category id used for every synthetic object.
pub const OBJECT_CATEGORY: u32 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorLayout {
    pub rows: usize,
    pub cols: usize,
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
}

impl Default for AnchorLayout {
    fn default() -> Self {
        Self {
            rows: 16,
            cols: 16,
            scales: vec![12.0, 14.5, 17.5, 21.0],
            ratios: vec![1.0],
        }
    }
}

impl AnchorLayout {
    pub fn anchors(&self, width: u32, height: u32) -> Result<Vec<BBox>> {
        generate_anchors(
            self.rows,
            self.cols,
            &self.scales,
            &self.ratios,
            width as f64,
            height as f64,
        )
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols * self.scales.len() * self.ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The fixed "backbone".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub dim: usize,
    /// Scale of the projected overlap descriptor.
    pub signal: f64,
    /// Scale of the per-object appearance vector.
    pub appearance: f64,
    /// Per-anchor noise level.
    pub noise: f64,
    pub seed: u64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            signal: 1.0,
            appearance: 0.0,
            noise: 1.0,
            seed: 7,
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("feature dimension must be >= 1".into()));
        }
        for (name, v) in [("signal", self.signal), ("appearance", self.appearance), ("noise", self.noise)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Row-major `dim x DESCRIPTOR_LEN` projection matrix.
    pub fn projection(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.dim * DESCRIPTOR_LEN)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// Overlap descriptor of one anchor against a set of objects.
pub fn descriptor(anchor: &BBox, objects: &[BBox]) -> [f64; DESCRIPTOR_LEN] {
    descriptor_with_best(anchor, objects).0
}

/// Descriptor plus the index of the best-IoU object (lowest index on ties).
fn descriptor_with_best(anchor: &BBox, objects: &[BBox]) -> ([f64; DESCRIPTOR_LEN], Option<usize>) {
    let mut overlap = 0.0f64;
    let mut fill = 0.0f64;
    let mut capture = 0.0f64;
    let mut best = None;
    for (k, obj) in objects.iter().enumerate() {
        let inter = anchor.intersection(obj);
        if inter == 0.0 {
            continue;
        }
        let v = iou(anchor, obj);
        if v > overlap {
            overlap = v;
            best = Some(k);
        }
        fill = fill.max(inter / anchor.area());
        capture = capture.max(inter / obj.area());
    }
    ([overlap, fill, capture, 1.0], best)
}

/// Per-anchor features for every scene, computed once and shared by every
/// training run over the same images.
#[derive(Debug, Clone)]
pub struct FeatureBank {
    pub dim: usize,
    pub anchors: Vec<BBox>,
    /// One row-major `anchors x dim` block per scene.
    pub scenes: Vec<Vec<f64>>,
}

impl FeatureBank {
    pub fn build(scenes: &[ImageRecord], layout: &AnchorLayout, spec: &FeatureSpec) -> Result<Self> {
        spec.validate()?;
        let Some(first) = scenes.first() else {
            return Ok(Self {
                dim: spec.dim,
                anchors: Vec::new(),
                scenes: Vec::new(),
            });
        };
        if scenes.iter().any(|s| (s.width, s.height) != (first.width, first.height)) {
            return Err(Error::InvalidConfig("scenes must share one image size".into()));
        }
        let anchors = layout.anchors(first.width, first.height)?;
        let projection = spec.projection();
        let blocks = scenes
            .iter()
            .map(|s| scene_features(s, &anchors, &projection, spec))
            .collect();
        Ok(Self {
            dim: spec.dim,
            anchors,
            scenes: blocks,
        })
    }

    pub fn row(&self, scene: usize, anchor: usize) -> &[f64] {
        &self.scenes[scene][anchor * self.dim..(anchor + 1) * self.dim]
    }
}

fn scene_features(scene: &ImageRecord, anchors: &[BBox], projection: &[f64], spec: &FeatureSpec) -> Vec<f64> {
    let objects = scene.all_boxes();
    let mut rng = image_rng(spec.seed ^ 0x5eed_f00d, &scene.image_id);
    let looks: Vec<Vec<f64>> = objects
        .iter()
        .map(|_| (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut out = Vec::with_capacity(anchors.len() * spec.dim);
    for anchor in anchors {
        let (c, best) = descriptor_with_best(anchor, &objects);
        for j in 0..spec.dim {
            let row = &projection[j * DESCRIPTOR_LEN..(j + 1) * DESCRIPTOR_LEN];
            let clean: f64 = row.iter().zip(&c).map(|(a, b)| a * b).sum();
            let look = best.map_or(0.0, |k| c[0] * looks[k][j]);
            let eps: f64 = rng.sample(StandardNormal);
            out.push(spec.signal * clean + spec.appearance * look + spec.noise * eps);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub image_size: u32,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_object_size: f64,
    pub max_object_size: f64,
    /// Largest width/height ratio (and its inverse) of an object.
    pub max_aspect: f64,
    /// Largest IoU allowed between two objects of one scene.
    pub max_object_overlap: f64,
    pub num_scenes: usize,
    pub seed: u64,
    /// Prefix for generated image ids, so train and test splits never collide.
    pub id_prefix: String,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            min_objects: 3,
            max_objects: 6,
            min_object_size: 12.0,
            max_object_size: 22.0,
            max_aspect: 1.2,
            max_object_overlap: 0.0,
            num_scenes: 100,
            seed: 0,
            id_prefix: "scene".into(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::InvalidConfig(format!(
                "object counts need 1 <= min <= max, got {}..{}",
                self.min_objects, self.max_objects
            )));
        }
        let size_ok = self.min_object_size > 0.0
            && self.min_object_size <= self.max_object_size
            && self.max_object_size < self.image_size as f64;
        if !size_ok {
            return Err(Error::InvalidConfig(format!(
                "object sizes {}..{} do not fit a {}px image",
                self.min_object_size, self.max_object_size, self.image_size
            )));
        }
        if !(self.max_aspect.is_finite() && self.max_aspect >= 1.0) {
            return Err(Error::InvalidConfig("max_aspect must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.max_object_overlap) {
            return Err(Error::InvalidConfig("max_object_overlap must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

const PLACEMENT_ATTEMPTS: usize = 10_000;
/// Failed draws in a row before the partial layout is thrown away.
const RESTART_AFTER: usize = 200;

/// Generates `cfg.num_scenes` scenes; scene `i` depends only on `(seed, i)`.
pub fn generate_scenes(cfg: &SceneConfig) -> Result<Vec<ImageRecord>> {
    cfg.validate()?;
    (0..cfg.num_scenes).map(|i| generate_scene(cfg, i)).collect()
}

fn generate_scene(cfg: &SceneConfig, index: usize) -> Result<ImageRecord> {
    let image_id = format!("{}{:05}", cfg.id_prefix, index);
    let mut rng = image_rng(cfg.seed, &image_id);
    let wanted = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let side = cfg.image_size as f64;
    let mut boxes: Vec<BBox> = Vec::with_capacity(wanted);
    let mut attempts = 0;
    let mut misses = 0;
    while boxes.len() < wanted {
        attempts += 1;
        misses += 1;
        if attempts > PLACEMENT_ATTEMPTS {
            return Err(Error::Placement {
                scene: index,
                wanted,
                attempts: PLACEMENT_ATTEMPTS,
            });
        }
        let size = rng.random_range(cfg.min_object_size..=cfg.max_object_size);
        let aspect = rng.random_range(cfg.max_aspect.recip()..=cfg.max_aspect);
        let w = size * aspect.sqrt();
        let h = size / aspect.sqrt();
        if w >= side || h >= side {
            continue;
        }
        let x1 = rng.random_range(0.0..=side - w);
        let y1 = rng.random_range(0.0..=side - h);
        let candidate = BBox::new(x1, y1, x1 + w, y1 + h)?;
        let clear = boxes.iter().all(|b| {
            let v = iou(b, &candidate);
            if cfg.max_object_overlap == 0.0 {
                v == 0.0
            } else {
                v <= cfg.max_object_overlap
            }
        });
        if clear {
            boxes.push(candidate);
            misses = 0;
        } else if misses >= RESTART_AFTER {
            boxes.clear();
            misses = 0;
        }
    }
    Ok(ImageRecord {
        image_id,
        width: cfg.image_size,
        height: cfg.image_size,
        annotations: boxes
            .into_iter()
            .map(|b| Annotation::new(b, OBJECT_CATEGORY))
            .collect(),
    })
}
