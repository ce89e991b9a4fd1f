//! Loss curves on a dense p_t grid and a numerical continuity check.

use brlkit_core::loss::brl_grad_sided;
use brlkit_core::{brl_loss, focal_grad, focal_loss, AnchorProbability, LossConfig, Result, Side, PROB_EPS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub p_t: f64,
    pub fl: f64,
    pub brl: f64,
    pub dfl: f64,
    pub dbrl: f64,
}

/// `points` evenly spaced values of p_t on `[eps, 1 - eps]`, plus `t` itself
/// when it lies inside. At `p_t = t` the BRL derivative is the one-sided
/// derivative of the branch that supplies the value.
pub fn loss_table(cfg: &LossConfig, points: usize) -> Result<Vec<LossRow>> {
    cfg.validate()?;
    let n = points.max(2);
    let mut grid: Vec<f64> = (0..n)
        .map(|i| PROB_EPS + (1.0 - 2.0 * PROB_EPS) * i as f64 / (n - 1) as f64)
        .collect();
    let t = cfg.recalib_t;
    if t > PROB_EPS && t < 1.0 - PROB_EPS && !grid.contains(&t) {
        grid.push(t);
        grid.sort_by(f64::total_cmp);
    }
    grid.into_iter()
        .map(|x| {
            let p = AnchorProbability::new(x)?;
            Ok(LossRow {
                p_t: x,
                fl: focal_loss(p, cfg)?,
                brl: brl_loss(p, cfg)?,
                dfl: focal_grad(p, cfg)?,
                dbrl: brl_grad_sided(p, cfg, Side::Below)?,
            })
        })
        .collect()
}

pub fn table_tsv(rows: &[LossRow]) -> String {
    let mut s = String::from("p_t\tfl\tbrl\tdfl_dp\tdbrl_dp\n");
    for r in rows {
        s.push_str(&format!(
            "{:.9}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.12e}\n",
            r.p_t, r.fl, r.brl, r.dfl, r.dbrl
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Continuity {
    /// Largest |BRL(p_{i+1}) - BRL(p_i)| over the grid.
    pub max_step: f64,
    /// Adjacent pairs whose change exceeds the local Lipschitz allowance.
    pub breaks: Vec<(f64, f64)>,
    /// Observed jump across `t` (value at `t` minus value just above), when
    /// `t` is on the grid.
    pub jump_at_t: Option<f64>,
    /// Mirrored minus focal value at `t`.
    pub expected_jump: f64,
}

impl Continuity {
    pub fn continuous(&self) -> bool {
        self.breaks.is_empty()
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "max_adjacent_step = {:.6e}\ndiscontinuities = {}\ncontinuous = {}\nexpected_jump_at_t = {:.12e}\n",
            self.max_step,
            self.breaks.len(),
            self.continuous(),
            self.expected_jump
        );
        if let Some(j) = self.jump_at_t {
            s.push_str(&format!("observed_jump_at_t = {j:.12e}\n"));
        }
        s
    }
}

/// A step between neighbours is a break when it exceeds twice the grid step
/// times the larger endpoint slope (with a tiny absolute floor).
pub fn continuity(rows: &[LossRow], cfg: &LossConfig) -> Continuity {
    let mut max_step = 0.0f64;
    let mut breaks = Vec::new();
    let mut jump_at_t = None;
    for w in rows.windows(2) {
        let (a, b) = (w[0], w[1]);
        let step = (b.brl - a.brl).abs();
        max_step = max_step.max(step);
        let allowance = 2.0 * (b.p_t - a.p_t) * a.dbrl.abs().max(b.dbrl.abs()).max(a.dfl.abs().max(b.dfl.abs())) + 1e-12;
        if step > allowance {
            breaks.push((a.p_t, b.p_t));
        }
        if a.p_t == cfg.recalib_t {
            jump_at_t = Some(a.brl - b.brl);
        }
    }
    Continuity {
        max_step,
        breaks,
        jump_at_t,
        expected_jump: cfg.brl_jump(),
    }
}
