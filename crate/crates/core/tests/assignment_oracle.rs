use brlkit_core::{assign, AnchorClass, AssignmentConfig, BBox};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_box(rng: &mut impl Rng, extent: f64) -> BBox {
    let x1 = rng.random_range(0.0..extent);
    let y1 = rng.random_range(0.0..extent);
    let w = rng.random_range(1.0..extent / 3.0);
    let h = rng.random_range(1.0..extent / 3.0);
    BBox::new(x1, y1, x1 + w, y1 + h).unwrap()
}

fn overlap(a: &BBox, b: &BBox) -> f64 {
    let w = a.x2.min(b.x2) - a.x1.max(b.x1);
    let h = a.y2.min(b.y2) - a.y1.max(b.y1);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    let union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    inter / union
}

fn brute_force(anchor: &BBox, gts: &[BBox], cfg: &AssignmentConfig) -> (AnchorClass, f64) {
    let mut best = 0.0f64;
    for g in gts {
        best = best.max(overlap(anchor, g));
    }
    let class = if best > cfg.pos_iou {
        AnchorClass::Positive
    } else if best > cfg.neg_hi && best <= cfg.pos_iou {
        AnchorClass::Ignored
    } else if best > 0.0 && best < cfg.confusion_iou {
        AnchorClass::Confusion
    } else if best == 0.0 && cfg.ambiguous_background {
        AnchorClass::Confusion
    } else {
        AnchorClass::Negative
    };
    (class, best)
}

#[test]
fn matches_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let confusion = [0.05, 0.1, 0.2];
    for instance in 0..1000 {
        let cfg = AssignmentConfig {
            ambiguous_background: instance % 5 == 0,
            ..AssignmentConfig::with_confusion_iou(confusion[instance % 3]).unwrap()
        };
        let anchors: Vec<BBox> = (0..rng.random_range(1..=500)).map(|_| random_box(&mut rng, 60.0)).collect();
        let gts: Vec<BBox> = (0..rng.random_range(0..=10)).map(|_| random_box(&mut rng, 60.0)).collect();
        for (a, got) in anchors.iter().zip(assign(&anchors, &gts, &cfg)) {
            let (class, best) = brute_force(a, &gts, &cfg);
            assert_eq!(got.class, class, "instance {instance}");
            assert!((got.max_iou - best).abs() < 1e-12);
            if class == AnchorClass::Positive {
                assert!(got.matched_gt.is_some());
            }
        }
    }
}

#[test]
fn no_ground_truth_means_all_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let anchors: Vec<BBox> = (0..50).map(|_| random_box(&mut rng, 60.0)).collect();
    for a in assign(&anchors, &[], &AssignmentConfig::default()) {
        assert_eq!(a.class, AnchorClass::Negative);
        assert_eq!(a.max_iou, 0.0);
        assert_eq!(a.matched_gt, None);
    }
}

fn boxes(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<BBox>> {
    prop::collection::vec((0.0..50.0f64, 0.0..50.0f64, 1.0..20.0f64, 1.0..20.0f64), n)
        .prop_map(|v| v.into_iter().map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap()).collect())
}

proptest! {
    #[test]
    fn permuting_ground_truths_keeps_classes(anchors in boxes(1..40), gts in boxes(1..8), shift in 0usize..8) {
        let cfg = AssignmentConfig::default();
        let mut rotated = gts.clone();
        let k = shift % gts.len();
        rotated.rotate_left(k);
        let a = assign(&anchors, &gts, &cfg);
        let b = assign(&anchors, &rotated, &cfg);
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.class, y.class);
            prop_assert_eq!(x.max_iou, y.max_iou);
            if let (Some(gx), Some(gy)) = (x.matched_gt, y.matched_gt) {
                prop_assert_eq!(x.max_iou, overlap(&anchors[x.anchor_index], &rotated[gy]));
                prop_assert_eq!(overlap(&anchors[x.anchor_index], &gts[gx]), x.max_iou);
            }
        }
    }

    #[test]
    fn removing_a_ground_truth_never_raises_overlap(anchors in boxes(1..40), gts in boxes(1..8), drop in 0usize..8) {
        let cfg = AssignmentConfig::default();
        let mut fewer = gts.clone();
        fewer.remove(drop % gts.len());
        let before = assign(&anchors, &gts, &cfg);
        let after = assign(&anchors, &fewer, &cfg);
        for (x, y) in before.iter().zip(&after) {
            prop_assert!(y.max_iou <= x.max_iou);
        }
    }

    #[test]
    fn confusion_set_grows_with_threshold(anchors in boxes(1..40), gts in boxes(1..8), lo in 0.0..0.39f64, hi in 0.0..0.39f64) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let small = assign(&anchors, &gts, &AssignmentConfig::with_confusion_iou(lo).unwrap());
        let large = assign(&anchors, &gts, &AssignmentConfig::with_confusion_iou(hi).unwrap());
        for (x, y) in small.iter().zip(&large) {
            if x.class == AnchorClass::Confusion {
                prop_assert_eq!(y.class, AnchorClass::Confusion);
            }
        }
    }
}
