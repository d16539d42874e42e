//! Contour losses with analytic gradients w.r.t. predicted vertex coordinates.
//!
//! Fixed pairing (vertex `i` against label vertex `i`) uses smooth-L1. The
//! dynamic matching loss (DML) pairs vertices by nearest neighbour instead:
//! every predicted vertex is pulled to its nearest interpolated boundary point,
//! and every key vertex pulls its nearest predicted vertex. Pairings come from
//! the contour *entering* the supervised module and are held constant, so
//! gradients flow only into the module's output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Contour, Point2};
use crate::labeling::LabeledInstance;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("vertex count mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("assignment index {index} out of range for {len} targets")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("target point set is empty")]
    EmptyTargets,
}

pub type Result<T> = std::result::Result<T, LossError>;

/// A scalar loss and its gradient w.r.t. each predicted vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<Point2>,
}

/// Loss applied to the output of the last refinement module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LastStageLoss {
    SmoothL1,
    Chamfer,
    #[default]
    Dml,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the initial-contour loss.
    pub alpha: f64,
    /// Weight of the coarse-contour loss.
    pub beta: f64,
    /// Smooth-L1 transition point in pixels.
    pub smooth_l1_delta: f64,
    pub last_stage: LastStageLoss,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 0.1, smooth_l1_delta: 1.0, last_stage: LastStageLoss::Dml }
    }
}

/// Per-stage losses. Gradients are of `l_overall` (weights applied) w.r.t.
/// the vertices of each stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_init: f64,
    pub l_coarse: f64,
    pub l_iter1: f64,
    pub l_iter2: f64,
    pub l_overall: f64,
    pub grad_init: Vec<Point2>,
    pub grad_coarse: Vec<Point2>,
    pub grad_iter1: Vec<Point2>,
    pub grad_iter2: Vec<Point2>,
}

/// Dynamic pairings, both computed from the pre-deformation contour.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchAssignment {
    /// For each predicted vertex, index into `gt_interp`.
    pub pred_to_interp: Vec<usize>,
    /// For each key vertex, index into the predicted contour.
    pub key_to_pred: Vec<usize>,
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Smooth-L1 of one coordinate difference and its derivative.
pub fn smooth_l1(d: f64, delta: f64) -> (f64, f64) {
    if d.abs() < delta {
        (0.5 * d * d / delta, d / delta)
    } else {
        (d.abs() - 0.5 * delta, sign0(d))
    }
}

/// Mean over vertices of per-coordinate smooth-L1, summed over x and y.
pub fn smooth_l1_contour(pred: &[Point2], gt: &[Point2], delta: f64) -> Result<LossGrad> {
    if pred.len() != gt.len() {
        return Err(LossError::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(LossError::EmptyTargets);
    }
    let inv_n = 1.0 / pred.len() as f64;
    let mut value = 0.0;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| {
            let (lx, gx) = smooth_l1(p.x - g.x, delta);
            let (ly, gy) = smooth_l1(p.y - g.y, delta);
            value += lx + ly;
            Point2::new(gx, gy) * inv_n
        })
        .collect();
    Ok(LossGrad { value: value * inv_n, grad })
}

/// Index of the candidate nearest to `p` (squared Euclidean, lowest index on ties).
pub fn nearest_index(p: Point2, candidates: &[Point2]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &q) in candidates.iter().enumerate() {
        let d = p.dist_sq(q);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((j, d));
        }
    }
    best.map(|(j, _)| j)
}

/// For each predicted vertex, the nearest interpolated label point.
pub fn match_pred_to_interp(pred_in: &[Point2], gt_interp: &[Point2]) -> Result<Vec<usize>> {
    if gt_interp.is_empty() {
        return Err(LossError::EmptyTargets);
    }
    Ok(pred_in.iter().map(|&p| nearest_index(p, gt_interp).expect("nonempty")).collect())
}

/// For each key vertex, the nearest predicted vertex. Several keys may share one.
pub fn match_key_to_pred(pred_in: &[Point2], gt_keys: &[Point2]) -> Result<Vec<usize>> {
    if pred_in.is_empty() || gt_keys.is_empty() {
        return Err(LossError::EmptyTargets);
    }
    Ok(gt_keys.iter().map(|&k| nearest_index(k, pred_in).expect("nonempty")).collect())
}

/// Mean L1 distance between each output vertex and its assigned boundary point.
pub fn loss_pull_to_boundary(pred_out: &[Point2], gt_interp: &[Point2], assign: &[usize]) -> Result<LossGrad> {
    if assign.len() != pred_out.len() {
        return Err(LossError::LengthMismatch(pred_out.len(), assign.len()));
    }
    let inv_n = 1.0 / pred_out.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pred_out.len());
    for (&p, &j) in pred_out.iter().zip(assign) {
        let t = *gt_interp.get(j).ok_or(LossError::IndexOutOfRange { index: j, len: gt_interp.len() })?;
        let d = p - t;
        value += d.l1();
        grad.push(Point2::new(sign0(d.x), sign0(d.y)) * inv_n);
    }
    Ok(LossGrad { value: value * inv_n, grad })
}

/// Mean L1 distance between each key vertex and its assigned output vertex;
/// gradients accumulate on shared vertices.
pub fn loss_pull_keys(pred_out: &[Point2], gt_keys: &[Point2], assign: &[usize]) -> Result<LossGrad> {
    if assign.len() != gt_keys.len() {
        return Err(LossError::LengthMismatch(gt_keys.len(), assign.len()));
    }
    if gt_keys.is_empty() {
        return Err(LossError::EmptyTargets);
    }
    let inv_k = 1.0 / gt_keys.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![Point2::ZERO; pred_out.len()];
    for (&k, &y) in gt_keys.iter().zip(assign) {
        let p = *pred_out.get(y).ok_or(LossError::IndexOutOfRange { index: y, len: pred_out.len() })?;
        let d = p - k;
        value += d.l1();
        grad[y] = grad[y] + Point2::new(sign0(d.x), sign0(d.y)) * inv_k;
    }
    Ok(LossGrad { value: value * inv_k, grad })
}

/// `(L1 + L2) / 2` with both pairings taken from `pred_in`; the gradient is
/// w.r.t. `pred_out` only.
pub fn dynamic_matching_loss(
    pred_in: &[Point2],
    pred_out: &[Point2],
    label: &LabeledInstance,
) -> Result<(LossGrad, MatchAssignment)> {
    if pred_in.len() != pred_out.len() {
        return Err(LossError::LengthMismatch(pred_in.len(), pred_out.len()));
    }
    let assignment = MatchAssignment {
        pred_to_interp: match_pred_to_interp(pred_in, &label.gt_interp)?,
        key_to_pred: match_key_to_pred(pred_in, &label.gt_keys)?,
    };
    let l1 = loss_pull_to_boundary(pred_out, &label.gt_interp, &assignment.pred_to_interp)?;
    let l2 = loss_pull_keys(pred_out, &label.gt_keys, &assignment.key_to_pred)?;
    let grad = l1.grad.iter().zip(&l2.grad).map(|(&a, &b)| (a + b) * 0.5).collect();
    Ok((LossGrad { value: 0.5 * (l1.value + l2.value), grad }, assignment))
}

/// Symmetric chamfer distance: mean nearest-neighbour Euclidean distance from
/// `pred` to `gt` plus from `gt` to `pred`. Insensitive to vertex order.
pub fn chamfer_loss(pred: &[Point2], gt: &[Point2]) -> Result<LossGrad> {
    if pred.is_empty() || gt.is_empty() {
        return Err(LossError::EmptyTargets);
    }
    let (inv_p, inv_g) = (1.0 / pred.len() as f64, 1.0 / gt.len() as f64);
    let mut grad = vec![Point2::ZERO; pred.len()];
    let unit = |d: Point2| {
        let n = d.norm();
        if n > 0.0 {
            d * (1.0 / n)
        } else {
            Point2::ZERO
        }
    };
    // distances are summed in sorted order so the value is exactly invariant
    // to reordering either point set
    let mut forward = Vec::with_capacity(pred.len());
    for (i, &p) in pred.iter().enumerate() {
        let j = nearest_index(p, gt).expect("nonempty");
        let d = p - gt[j];
        forward.push(d.norm());
        grad[i] = grad[i] + unit(d) * inv_p;
    }
    let mut backward = Vec::with_capacity(gt.len());
    for &q in gt {
        let i = nearest_index(q, pred).expect("nonempty");
        let d = pred[i] - q;
        backward.push(d.norm());
        grad[i] = grad[i] + unit(d) * inv_g;
    }
    let sorted_sum = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.iter().sum::<f64>()
    };
    Ok(LossGrad { value: sorted_sum(forward) * inv_p + sorted_sum(backward) * inv_g, grad })
}

/// Weighted training objective over the four contour stages.
///
/// `init`, `coarse` and `iter1` use fixed-pairing smooth-L1 against the
/// aligned label; `iter2` uses `cfg.last_stage`, with DML matched on `iter1`.
pub fn overall_loss(stages: [&Contour; 4], label: &LabeledInstance, cfg: &LossConfig) -> Result<LossBreakdown> {
    let [init, coarse, iter1, iter2] = stages;
    let gt = label.gt_contour.points();
    let delta = cfg.smooth_l1_delta;
    let li = smooth_l1_contour(init.points(), gt, delta)?;
    let lc = smooth_l1_contour(coarse.points(), gt, delta)?;
    let l1 = smooth_l1_contour(iter1.points(), gt, delta)?;
    let l2 = match cfg.last_stage {
        LastStageLoss::SmoothL1 => smooth_l1_contour(iter2.points(), gt, delta)?,
        LastStageLoss::Chamfer => chamfer_loss(iter2.points(), gt)?,
        LastStageLoss::Dml => dynamic_matching_loss(iter1.points(), iter2.points(), label)?.0,
    };
    let scale = |g: Vec<Point2>, w: f64| g.into_iter().map(|p| p * w).collect::<Vec<_>>();
    Ok(LossBreakdown {
        l_overall: cfg.alpha * li.value + cfg.beta * lc.value + l1.value + l2.value,
        l_init: li.value,
        l_coarse: lc.value,
        l_iter1: l1.value,
        l_iter2: l2.value,
        grad_init: scale(li.grad, cfg.alpha),
        grad_coarse: scale(lc.grad, cfg.beta),
        grad_iter1: l1.grad,
        grad_iter2: l2.grad,
    })
}
