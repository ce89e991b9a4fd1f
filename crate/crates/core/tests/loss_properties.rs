use brlkit_core::assign::{AnchorAssignment, AnchorClass};
use brlkit_core::loss::{batch_loss, brl_grad, brl_grad_sided, brl_loss, focal_grad, focal_loss};
use brlkit_core::{AnchorProbability, LossConfig, Side};

const STEP: f64 = 1e-6;

fn grid() -> Vec<f64> {
    (1..=1000).map(|i| i as f64 / 1001.0).collect()
}

fn configs() -> Vec<LossConfig> {
    let mut out = Vec::new();
    for &alpha in &[0.25, 0.5, 1.0] {
        for &gamma in &[0.0, 0.5, 2.0, 5.0] {
            for &t in &[0.0, 0.25, 0.5] {
                out.push(LossConfig::new(alpha, gamma, t, 1.0).unwrap());
            }
        }
    }
    out
}

fn p(x: f64) -> AnchorProbability {
    AnchorProbability::new(x).unwrap()
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-5 * numeric.abs().max(analytic.abs()) + 1e-8
}

#[test]
fn focal_gradient_matches_central_differences() {
    for cfg in configs() {
        for x in grid() {
            let fd = (focal_loss(p(x + STEP), &cfg).unwrap() - focal_loss(p(x - STEP), &cfg).unwrap()) / (2.0 * STEP);
            let g = focal_grad(p(x), &cfg).unwrap();
            assert!(close(g, fd), "cfg {cfg:?} p {x}: {g} vs {fd}");
        }
    }
}

#[test]
fn brl_gradient_matches_central_differences() {
    for cfg in configs() {
        for x in grid() {
            if (x - cfg.recalib_t).abs() < 2.0 * STEP {
                continue;
            }
            let fd = (brl_loss(p(x + STEP), &cfg).unwrap() - brl_loss(p(x - STEP), &cfg).unwrap()) / (2.0 * STEP);
            let g = brl_grad(p(x), &cfg).unwrap();
            assert!(close(g, fd), "cfg {cfg:?} p {x}: {g} vs {fd}");
        }
    }
}

#[test]
fn brl_without_threshold_is_focal() {
    for mut cfg in configs() {
        cfg.recalib_t = 0.0;
        for x in grid() {
            let a = brl_loss(p(x), &cfg).unwrap();
            let b = focal_loss(p(x), &cfg).unwrap();
            assert!((a - b).abs() <= 1e-12);
            assert!((brl_grad(p(x), &cfg).unwrap() - focal_grad(p(x), &cfg).unwrap()).abs() <= 1e-12);
        }
    }
}

#[test]
fn branches_meet_at_one_half() {
    for cfg in configs() {
        let cfg = LossConfig { recalib_t: 0.5, ..cfg };
        let below = brl_loss(p(0.5), &cfg).unwrap();
        let above = focal_loss(p(0.5), &cfg).unwrap();
        assert!((below - above).abs() <= 1e-12);
        assert!(cfg.brl_jump().abs() <= 1e-12);
    }
}

#[test]
fn focal_loss_decreases_in_confidence() {
    for cfg in configs() {
        let values: Vec<f64> = grid().into_iter().map(|x| focal_loss(p(x), &cfg).unwrap()).collect();
        assert!(values.windows(2).all(|w| w[1] < w[0]), "{cfg:?}");
    }
}

#[test]
fn mirrored_branch_rises_toward_threshold() {
    let cfg = LossConfig::new(0.5, 2.0, 0.5, 1.0).unwrap();
    let below: Vec<f64> = grid()
        .into_iter()
        .filter(|&x| x < 0.5)
        .map(|x| brl_loss(p(x), &cfg).unwrap())
        .collect();
    assert!(below.windows(2).all(|w| w[1] > w[0]));
    assert!(brl_grad_sided(p(0.5), &cfg, Side::Below).unwrap() > 0.0);
    assert!(brl_grad_sided(p(0.5), &cfg, Side::Above).unwrap() < 0.0);
}

#[test]
fn jump_matches_closed_form() {
    // Mirrored minus focal value at t, evaluated in 50-digit arithmetic.
    let cfg = LossConfig::new(0.5, 2.0, 0.25, 1.0).unwrap();
    let jump = cfg.brl_jump();
    assert!((jump - -0.380905224300851082).abs() < 1e-12, "{jump}");
    let above = brl_loss(p(0.25 + 1e-12), &cfg).unwrap();
    let at = brl_loss(p(0.25), &cfg).unwrap();
    assert!(((at - above) - jump).abs() < 1e-9);
}

fn assignment(i: usize, class: AnchorClass) -> AnchorAssignment {
    AnchorAssignment {
        anchor_index: i,
        class,
        matched_gt: None,
        max_iou: 0.0,
    }
}

#[test]
fn batch_loss_is_additive() {
    let classes = [
        AnchorClass::Positive,
        AnchorClass::Negative,
        AnchorClass::Confusion,
        AnchorClass::Ignored,
    ];
    let preds: Vec<(usize, f64)> = (0..40).map(|i| (i, ((i * 37) % 97) as f64 / 97.0 + 0.004)).collect();
    let asg: Vec<AnchorAssignment> = (0..40).map(|i| assignment(i, classes[i % 4])).collect();
    let cfg = LossConfig::default();
    let whole = batch_loss(&preds, &asg, &cfg).unwrap();
    let a = batch_loss(&preds[..17], &asg[..17], &cfg).unwrap();
    let b = batch_loss(&preds[17..], &asg[17..], &cfg).unwrap();
    assert!((whole.total - a.total - b.total).abs() < 1e-12);
    assert!((whole.confusion - a.confusion - b.confusion).abs() < 1e-12);
    assert_eq!(whole.num_positive, a.num_positive + b.num_positive);
    let joined: Vec<f64> = a.grads.iter().chain(&b.grads).copied().collect();
    assert_eq!(whole.grads, joined);
}
