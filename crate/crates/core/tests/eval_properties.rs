use std::collections::BTreeMap;

use brlkit_core::eval::{coco_thresholds, score_order};
use brlkit_core::{average_precision, evaluate, match_detections, Annotation, BBox, Detection, ImageRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Deserialize)]
struct Expected {
    per_class: BTreeMap<u32, Vec<f64>>,
    per_iou_map: Vec<f64>,
    map50: f64,
    map75: f64,
    map_coco: f64,
}

#[derive(Deserialize)]
struct Golden {
    images: Vec<ImageRecord>,
    detections: Vec<Detection>,
    expected: Expected,
}

fn golden() -> Golden {
    serde_json::from_str(include_str!("golden/eval_small.json")).unwrap()
}

#[test]
fn golden_instance() {
    let g = golden();
    let r = evaluate(&g.detections, &g.images, &coco_thresholds()).unwrap();
    let near = |a: f64, b: f64| (a - b).abs() < 1e-12;
    for (cat, want) in &g.expected.per_class {
        let got = &r.per_class[cat];
        assert_eq!(got.len(), want.len());
        for (x, y) in got.iter().zip(want) {
            assert!(near(x.unwrap(), *y), "class {cat}: {got:?}");
        }
    }
    for (x, y) in r.per_iou_map.iter().zip(&g.expected.per_iou_map) {
        assert!(near(*x, *y));
    }
    assert!(near(r.map50.unwrap(), g.expected.map50));
    assert!(near(r.map75.unwrap(), g.expected.map75));
    assert!(near(r.map_coco.unwrap(), g.expected.map_coco));
}

#[test]
fn interpolated_precision_example() {
    let ap = average_precision(&[true, false, true], 2).unwrap();
    assert!((ap - 5.0 / 6.0).abs() < 1e-15);
}

fn random_instance(rng: &mut impl Rng, dets: usize, gts_per_image: usize) -> (Vec<Detection>, Vec<ImageRecord>) {
    let ids = ["p", "q"];
    let mut records = Vec::new();
    for id in ids {
        let annotations = (0..gts_per_image)
            .map(|_| {
                let x = rng.random_range(0.0..30.0);
                let y = rng.random_range(0.0..30.0);
                Annotation::new(BBox::new(x, y, x + rng.random_range(5.0..15.0), y + rng.random_range(5.0..15.0)).unwrap(), rng.random_range(0..2))
            })
            .collect();
        records.push(ImageRecord {
            image_id: id.into(),
            width: 64,
            height: 64,
            annotations,
        });
    }
    let detections = (0..dets)
        .map(|_| {
            let rec = &records[rng.random_range(0..2)];
            let base = rec.annotations[rng.random_range(0..rec.annotations.len())].bbox;
            let j = |r: &mut dyn rand::RngCore| r.random_range(-3.0..3.0);
            let (x1, y1) = (base.x1 + j(rng), base.y1 + j(rng));
            Detection {
                image_id: rec.image_id.clone(),
                category: rng.random_range(0..2),
                // Coarse scores so ties happen.
                score: (rng.random_range(0..10) as f64) / 10.0,
                bbox: BBox::new(x1, y1, x1 + base.width() + j(rng).abs(), y1 + base.height() + j(rng).abs()).unwrap(),
            }
        })
        .collect();
    (detections, records)
}

fn overlap(a: &BBox, b: &BBox) -> f64 {
    let w = a.x2.min(b.x2) - a.x1.max(b.x1);
    let h = a.y2.min(b.y2) - a.y1.max(b.y1);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    w * h / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - w * h)
}

/// Enumerates every partial matching of detections (taken in score order) to
/// ground truths and returns those where each step obeys the greedy rule.
fn greedy_matchings(dets: &[Detection], gts: &[ImageRecord], order: &[usize], thr: f64) -> Vec<Vec<Option<(usize, usize)>>> {
    let all_gts: Vec<(usize, usize)> = gts
        .iter()
        .enumerate()
        .flat_map(|(r, rec)| (0..rec.annotations.len()).map(move |k| (r, k)))
        .collect();
    let mut found = Vec::new();
    let mut chosen: Vec<Option<(usize, usize)>> = Vec::new();
    fn recurse(
        step: usize,
        dets: &[Detection],
        gts: &[ImageRecord],
        order: &[usize],
        thr: f64,
        all_gts: &[(usize, usize)],
        chosen: &mut Vec<Option<(usize, usize)>>,
        found: &mut Vec<Vec<Option<(usize, usize)>>>,
    ) {
        if step == order.len() {
            found.push(chosen.clone());
            return;
        }
        let d = &dets[order[step]];
        let eligible = |&(r, k): &(usize, usize)| {
            let a = &gts[r].annotations[k];
            gts[r].image_id == d.image_id && a.category == d.category && !chosen.contains(&Some((r, k)))
        };
        let best = all_gts
            .iter()
            .filter(|g| eligible(g))
            .map(|&(r, k)| overlap(&d.bbox, &gts[r].annotations[k].bbox))
            .fold(0.0f64, f64::max);
        let first_best = all_gts
            .iter()
            .filter(|g| eligible(g))
            .find(|&&(r, k)| overlap(&d.bbox, &gts[r].annotations[k].bbox) == best)
            .copied();
        let mut options: Vec<Option<(usize, usize)>> = vec![None];
        options.extend(all_gts.iter().filter(|g| eligible(g)).map(|&g| Some(g)));
        let valid: Vec<(Option<(usize, usize)>, bool)> = options
            .into_iter()
            .map(|opt| {
                let ok = match opt {
                    None => best < thr,
                    Some((r, k)) => {
                        let v = overlap(&d.bbox, &gts[r].annotations[k].bbox);
                        v >= thr && v == best && first_best == Some((r, k))
                    }
                };
                (opt, ok)
            })
            .collect();
        for (opt, ok) in valid {
            if ok {
                chosen.push(opt);
                recurse(step + 1, dets, gts, order, thr, all_gts, chosen, found);
                chosen.pop();
            }
        }
    }
    recurse(0, dets, gts, order, thr, &all_gts, &mut chosen, &mut found);
    found
}

#[test]
fn matching_equals_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let (dets, gts) = random_instance(&mut rng, 20, 3);
        let gts = vec![
            gts[0].clone(),
            ImageRecord {
                annotations: gts[1].annotations[..2].to_vec(),
                ..gts[1].clone()
            },
        ];
        let order = score_order(&dets);
        for &thr in &[0.3, 0.5, 0.75] {
            let flags = match_detections(&dets, &gts, thr);
            let matchings = greedy_matchings(&dets, &gts, &order, thr);
            assert_eq!(matchings.len(), 1);
            for (step, m) in matchings[0].iter().enumerate() {
                assert_eq!(flags[order[step]], m.is_some());
            }
        }
    }
}

#[test]
fn ap_depends_only_on_score_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (dets, gts) = random_instance(&mut rng, 30, 4);
        let squashed: Vec<Detection> = dets
            .iter()
            .map(|d| Detection {
                score: 1.0 / (1.0 + (-5.0 * d.score).exp()),
                ..d.clone()
            })
            .collect();
        let a = evaluate(&dets, &gts, &coco_thresholds()).unwrap();
        let b = evaluate(&squashed, &gts, &coco_thresholds()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn map_never_rises_with_iou() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (dets, gts) = random_instance(&mut rng, 25, 4);
        let r = evaluate(&dets, &gts, &coco_thresholds()).unwrap();
        assert!(r.per_iou_map.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", r.per_iou_map);
    }
}

#[test]
fn matching_decomposes_over_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..50 {
        let (dets, gts) = random_instance(&mut rng, 30, 4);
        let pooled = match_detections(&dets, &gts, 0.5);
        for rec in &gts {
            let idx: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].image_id == rec.image_id).collect();
            let subset: Vec<Detection> = idx.iter().map(|&i| dets[i].clone()).collect();
            let flags = match_detections(&subset, std::slice::from_ref(rec), 0.5);
            for (k, &i) in idx.iter().enumerate() {
                assert_eq!(flags[k], pooled[i]);
            }
        }
    }
}

#[test]
fn perfect_detector_scores_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (_, gts) = random_instance(&mut rng, 0, 5);
    let dets: Vec<Detection> = gts
        .iter()
        .flat_map(|r| {
            r.annotations.iter().map(|a| Detection {
                image_id: r.image_id.clone(),
                category: a.category,
                score: 0.9,
                bbox: a.bbox,
            })
        })
        .collect();
    let r = evaluate(&dets, &gts, &coco_thresholds()).unwrap();
    assert_eq!(r.map50, Some(1.0));
    assert_eq!(r.map_coco, Some(1.0));
    assert!(r.per_iou_map.iter().all(|&m| m == 1.0));
}
