//! Annotation erasure under the four missing-label protocols.
//!
//! Every image draws from its own ChaCha8 stream seeded by
//! `SHA-256(seed_le || image_id)`, so an image is curated identically no
//! matter where it sits in the corpus. Erased annotations stay in the record
//! with `erased = true`.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{validate_corpus, CurationReport, ImageRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurationMode {
    /// Everything kept.
    Normal,
    /// One annotation erased from each image that has at least two.
    Easy,
    /// `floor(n / 2)` erased from each image with `n >= 2`.
    Hard,
    /// All but one erased.
    Extreme,
}

impl CurationMode {
    pub const ALL: [CurationMode; 4] = [
        CurationMode::Normal,
        CurationMode::Easy,
        CurationMode::Hard,
        CurationMode::Extreme,
    ];

    /// How many of `n` annotations this mode erases.
    pub fn erase_count(self, n: usize) -> usize {
        match self {
            CurationMode::Normal => 0,
            CurationMode::Easy => usize::from(n >= 2),
            CurationMode::Hard => n / 2,
            CurationMode::Extreme => n.saturating_sub(1),
        }
    }
}

impl fmt::Display for CurationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurationMode::Normal => "normal",
            CurationMode::Easy => "easy",
            CurationMode::Hard => "hard",
            CurationMode::Extreme => "extreme",
        })
    }
}

impl FromStr for CurationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(CurationMode::Normal),
            "easy" => Ok(CurationMode::Easy),
            "hard" => Ok(CurationMode::Hard),
            "extreme" => Ok(CurationMode::Extreme),
            other => Err(Error::InvalidConfig(format!("unknown curation mode {other:?}"))),
        }
    }
}

/// RNG for one image's erasure draws.
pub fn image_rng(seed: u64, image_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(image_id.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Positions (into `rec.annotations`) of annotations still visible.
fn active_positions(rec: &ImageRecord) -> Vec<usize> {
    rec.annotations
        .iter()
        .enumerate()
        .filter(|(_, a)| !a.erased)
        .map(|(i, _)| i)
        .collect()
}

fn erase_in_image(rec: &mut ImageRecord, mode: CurationMode, seed: u64) -> Result<()> {
    let active = active_positions(rec);
    let n = active.len();
    if n == 0 {
        return Err(Error::EmptyImage(rec.image_id.clone()));
    }
    let k = mode.erase_count(n);
    if k == 0 {
        return Ok(());
    }
    let mut rng = image_rng(seed, &rec.image_id);
    match mode {
        CurationMode::Extreme => {
            let keep = rng.random_range(0..n);
            for (j, &pos) in active.iter().enumerate() {
                if j != keep {
                    rec.annotations[pos].erased = true;
                }
            }
        }
        _ => {
            for j in index::sample(&mut rng, n, k) {
                rec.annotations[active[j]].erased = true;
            }
        }
    }
    Ok(())
}

/// Applies `mode` to every image. Fails on images with no annotations.
pub fn curate(
    corpus: &[ImageRecord],
    mode: CurationMode,
    seed: u64,
) -> Result<(Vec<ImageRecord>, CurationReport)> {
    validate_corpus(corpus)?;
    let mut out = corpus.to_vec();
    for rec in &mut out {
        erase_in_image(rec, mode, seed)?;
    }
    let report = CurationReport::from_records(&out);
    Ok((out, report))
}

/// Hard mode applied separately within each category of each image, the
/// per-category 50% erasure variant. A category with a single instance in an
/// image keeps it, so every image keeps at least one annotation.
pub fn curate_per_category(
    corpus: &[ImageRecord],
    seed: u64,
) -> Result<(Vec<ImageRecord>, CurationReport)> {
    validate_corpus(corpus)?;
    let mut out = corpus.to_vec();
    for rec in &mut out {
        let active = active_positions(rec);
        if active.is_empty() {
            return Err(Error::EmptyImage(rec.image_id.clone()));
        }
        let mut categories: Vec<u32> = active.iter().map(|&i| rec.annotations[i].category).collect();
        categories.sort_unstable();
        categories.dedup();
        let mut rng = image_rng(seed, &rec.image_id);
        for cat in categories {
            let group: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&i| rec.annotations[i].category == cat)
                .collect();
            let k = group.len() / 2;
            for j in index::sample(&mut rng, group.len(), k) {
                rec.annotations[group[j]].erased = true;
            }
        }
    }
    let report = CurationReport::from_records(&out);
    Ok((out, report))
}
