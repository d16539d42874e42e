//! Finite-difference verification of every analytic gradient.
//!
//! Loss functions are checked w.r.t. predicted vertices; the full model is
//! checked element by element for every parameter tensor and the feature
//! grid, through the complete four-stage objective.
//!
//! Piecewise definitions (smooth-L1 regimes, L1 signs, nearest-neighbour
//! assignments, ReLU, bilinear cells, clamps, bbox extremes) make gradients
//! undefined on switching surfaces. Instances whose loss-level state lies
//! within `kink_margin` of a switch are redrawn; individual elements whose
//! discrete state changes inside the `±step` stencil are skipped and counted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Contour, Point2};
use crate::labeling::{LabeledInstance, MdaConfig};
use crate::losses::{
    chamfer_loss, dynamic_matching_loss, loss_pull_keys, loss_pull_to_boundary, match_key_to_pred, match_pred_to_interp,
    overall_loss, smooth_l1_contour, LastStageLoss, LossConfig, LossGrad,
};
use crate::model::{backward, forward, FeatureGrid, ModelConfig, ModelParams};
use crate::training::{encode_instance, generate_dataset, EncoderConfig, ShapeFamily, SynthConfig};

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("could not draw an instance away from kinks after {0} attempts")]
    NoCleanInstance(usize),
    #[error(transparent)]
    Train(#[from] crate::training::TrainError),
    #[error(transparent)]
    Label(#[from] crate::labeling::LabelError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Loss(#[from] crate::losses::LossError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub n_vertices: usize,
    pub channels: usize,
    pub grid_size: usize,
    /// Random instances per loss check.
    pub loss_instances: usize,
    /// Random instances for the full-model sweep.
    pub model_instances: usize,
    pub step: f64,
    pub tolerance: f64,
    pub kink_margin: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            n_vertices: 16,
            channels: 4,
            grid_size: 16,
            loss_instances: 25,
            model_instances: 2,
            step: 1e-5,
            tolerance: 1e-4,
            kink_margin: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub checked: usize,
    pub rejected: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub config: GradCheckConfig,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-4)`
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

#[derive(Default)]
struct Tally {
    checked: usize,
    rejected: usize,
    max_rel_err: f64,
}

impl Tally {
    fn record(&mut self, a: f64, n: f64) {
        self.checked += 1;
        let e = rel_err(a, n);
        if e.is_nan() {
            self.max_rel_err = f64::INFINITY;
        } else {
            self.max_rel_err = self.max_rel_err.max(e);
        }
    }

    fn finish(self, name: &str, tol: f64) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            passed: self.checked > 0 && self.max_rel_err < tol,
            checked: self.checked,
            rejected: self.rejected,
            max_rel_err: self.max_rel_err,
        }
    }
}

/// Gap between the nearest and second-nearest candidate distances.
fn match_gap(p: Point2, cands: &[Point2]) -> f64 {
    let (mut d1, mut d2) = (f64::INFINITY, f64::INFINITY);
    for &q in cands {
        let d = p.dist(q);
        if d < d1 {
            d2 = d1;
            d1 = d;
        } else if d < d2 {
            d2 = d;
        }
    }
    d2 - d1
}

fn coord_min_abs(pairs: impl Iterator<Item = Point2>) -> f64 {
    pairs.map(|d| d.x.abs().min(d.y.abs())).fold(f64::INFINITY, f64::min)
}

fn smooth_margin(pred: &[Point2], gt: &[Point2], delta: f64) -> f64 {
    pred.iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = *p - *g;
            (d.x.abs() - delta).abs().min((d.y.abs() - delta).abs())
        })
        .fold(f64::INFINITY, f64::min)
}

fn dml_margin(pin: &[Point2], pout: &[Point2], label: &LabeledInstance) -> f64 {
    let a = match_pred_to_interp(pin, &label.gt_interp).expect("nonempty");
    let b = match_key_to_pred(pin, &label.gt_keys).expect("nonempty");
    let gaps = pin
        .iter()
        .map(|&p| match_gap(p, &label.gt_interp))
        .chain(label.gt_keys.iter().map(|&k| match_gap(k, pin)))
        .fold(f64::INFINITY, f64::min);
    let l1 = coord_min_abs(pout.iter().zip(&a).map(|(p, &j)| *p - label.gt_interp[j]));
    let l2 = coord_min_abs(label.gt_keys.iter().zip(&b).map(|(k, &y)| pout[y] - *k));
    gaps.min(l1).min(l2)
}

fn chamfer_margin(pred: &[Point2], gt: &[Point2]) -> f64 {
    let norms = |a: &[Point2], b: &[Point2]| {
        a.iter()
            .map(|&p| b.iter().map(|&q| p.dist(q)).fold(f64::INFINITY, f64::min).min(match_gap(p, b)))
            .fold(f64::INFINITY, f64::min)
    };
    norms(pred, gt).min(norms(gt, pred))
}

/// Distance of the loss evaluation from its nearest switching surface.
pub fn loss_kink_margin(stages: [&Contour; 4], label: &LabeledInstance, cfg: &LossConfig) -> f64 {
    let gt = label.gt_contour.points();
    let d = cfg.smooth_l1_delta;
    let mut m = [stages[0], stages[1], stages[2]].iter().map(|c| smooth_margin(c.points(), gt, d)).fold(f64::INFINITY, f64::min);
    m = m.min(match cfg.last_stage {
        LastStageLoss::SmoothL1 => smooth_margin(stages[3].points(), gt, d),
        LastStageLoss::Chamfer => chamfer_margin(stages[3].points(), gt),
        LastStageLoss::Dml => dml_margin(stages[2].points(), stages[3].points(), label),
    });
    m
}

/// Discrete state of the loss: regimes, signs and assignments.
pub fn loss_signature(stages: [&Contour; 4], label: &LabeledInstance, cfg: &LossConfig) -> Vec<i64> {
    let gt = label.gt_contour.points();
    let mut s = Vec::new();
    let regime = |s: &mut Vec<i64>, pred: &[Point2]| {
        for (p, g) in pred.iter().zip(gt) {
            let d = *p - *g;
            for v in [d.x, d.y] {
                s.push(if v.abs() < cfg.smooth_l1_delta { 0 } else { v.signum() as i64 });
            }
        }
    };
    for c in &stages[..3] {
        regime(&mut s, c.points());
    }
    let (pin, pout) = (stages[2].points(), stages[3].points());
    match cfg.last_stage {
        LastStageLoss::SmoothL1 => regime(&mut s, pout),
        LastStageLoss::Chamfer => {
            s.extend(pout.iter().map(|&p| crate::losses::nearest_index(p, gt).unwrap() as i64));
            s.extend(gt.iter().map(|&q| crate::losses::nearest_index(q, pout).unwrap() as i64));
        }
        LastStageLoss::Dml => {
            let a = match_pred_to_interp(pin, &label.gt_interp).unwrap();
            let b = match_key_to_pred(pin, &label.gt_keys).unwrap();
            for (p, &j) in pout.iter().zip(&a) {
                let d = *p - label.gt_interp[j];
                s.extend([j as i64, d.x.signum() as i64, d.y.signum() as i64]);
            }
            for (k, &y) in label.gt_keys.iter().zip(&b) {
                let d = pout[y] - *k;
                s.extend([y as i64, d.x.signum() as i64, d.y.signum() as i64]);
            }
        }
    }
    s
}

fn fd_points(x: &[Point2], h: f64, f: &dyn Fn(&[Point2]) -> f64) -> Vec<Point2> {
    let mut y = x.to_vec();
    let mut out = vec![Point2::ZERO; x.len()];
    for i in 0..x.len() {
        for axis in 0..2 {
            let orig = y[i];
            let set = |y: &mut Vec<Point2>, s: f64| {
                y[i] = if axis == 0 { Point2::new(orig.x + s, orig.y) } else { Point2::new(orig.x, orig.y + s) };
            };
            set(&mut y, h);
            let fp = f(&y);
            set(&mut y, -h);
            let fm = f(&y);
            y[i] = orig;
            let g = (fp - fm) / (2.0 * h);
            if axis == 0 {
                out[i].x = g
            } else {
                out[i].y = g
            }
        }
    }
    out
}

fn jitter(rng: &mut ChaCha8Rng, c: &[Point2], a: f64) -> Vec<Point2> {
    c.iter().map(|&p| p + Point2::new(rng.gen_range(-a..a), rng.gen_range(-a..a))).collect()
}

struct Fixture {
    labels: Vec<LabeledInstance>,
    grids: Vec<FeatureGrid>,
}

fn fixture(cfg: &GradCheckConfig, count: usize) -> Result<Fixture, GradCheckError> {
    let side = cfg.grid_size * 4;
    let synth = SynthConfig {
        n_instances: count,
        shape_family: ShapeFamily::Blob,
        image_size: [side, side],
        seed: cfg.seed,
        ..SynthConfig::default()
    };
    let mda = MdaConfig { n_vertices: cfg.n_vertices, m_aligned: 4, ..MdaConfig::default() };
    let enc = EncoderConfig { grid_size: [cfg.grid_size, cfg.grid_size], channels: cfg.channels };
    let mut labels = Vec::new();
    let mut grids = Vec::new();
    for inst in generate_dataset(&synth)? {
        labels.push(crate::labeling::build_label(&inst.polygon, &mda)?);
        grids.push(encode_instance(&inst.polygon, [side, side], &enc)?);
    }
    Ok(Fixture { labels, grids })
}

const MAX_ATTEMPTS: usize = 1000;

fn check_losses(cfg: &GradCheckConfig, fx: &Fixture, rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>, GradCheckError> {
    let h = cfg.step;
    let names = ["smooth_l1_contour", "dml.pull_to_boundary", "dml.pull_keys", "dml", "chamfer"];
    let mut tallies: Vec<Tally> = names.iter().map(|_| Tally::default()).collect();
    for label in &fx.labels {
        let gt = label.gt_contour.points();
        for (which, tally) in tallies.iter_mut().enumerate() {
            let mut attempts = 0;
            let (pin, pout) = loop {
                attempts += 1;
                if attempts > MAX_ATTEMPTS {
                    return Err(GradCheckError::NoCleanInstance(MAX_ATTEMPTS));
                }
                let pin = jitter(rng, gt, 3.0);
                let pout = jitter(rng, &pin, 1.0);
                let margin = match which {
                    0 => smooth_margin(&pout, gt, 1.0),
                    1..=3 => dml_margin(&pin, &pout, label),
                    _ => chamfer_margin(&pout, gt),
                };
                if margin >= cfg.kink_margin {
                    break (pin, pout);
                }
                tally.rejected += 1;
            };
            let a = match_pred_to_interp(&pin, &label.gt_interp)?;
            let b = match_key_to_pred(&pin, &label.gt_keys)?;
            let f: Box<dyn Fn(&[Point2]) -> LossGrad> = match which {
                0 => Box::new(|x| smooth_l1_contour(x, gt, 1.0).unwrap()),
                1 => Box::new(|x| loss_pull_to_boundary(x, &label.gt_interp, &a).unwrap()),
                2 => Box::new(|x| loss_pull_keys(x, &label.gt_keys, &b).unwrap()),
                3 => Box::new(|x| dynamic_matching_loss(&pin, x, label).unwrap().0),
                _ => Box::new(|x| chamfer_loss(x, gt).unwrap()),
            };
            let analytic = f(&pout).grad;
            let numeric = fd_points(&pout, h, &|x| f(x).value);
            for (u, v) in analytic.iter().zip(&numeric) {
                tally.record(u.x, v.x);
                tally.record(u.y, v.y);
            }
        }
    }
    Ok(tallies.into_iter().zip(names).map(|(t, n)| t.finish(n, cfg.tolerance)).collect())
}

fn model_config(cfg: &GradCheckConfig) -> ModelConfig {
    ModelConfig {
        n_vertices: cfg.n_vertices,
        channels: cfg.channels,
        init_hidden: 16,
        refine_channels: 8,
        init_offset_scale: 8.0,
        global_offset_scale: 4.0,
        refine_offset_scale: 2.0,
        seed: cfg.seed,
        ..ModelConfig::default()
    }
}

fn check_model(cfg: &GradCheckConfig, fx: &Fixture, rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>, GradCheckError> {
    let h = cfg.step;
    let loss_cfg = LossConfig::default();
    let base = ModelParams::new(model_config(cfg))?;
    let names: Vec<String> = base.named().into_iter().map(|(n, _)| n).chain(["feature_grid".to_string()]).collect();
    let mut tallies: Vec<Tally> = names.iter().map(|_| Tally::default()).collect();
    for (label, grid) in fx.labels.iter().zip(&fx.grids) {
        // draw parameters until the loss sits away from its kinks
        let mut attempts = 0;
        let params = loop {
            attempts += 1;
            if attempts > MAX_ATTEMPTS {
                return Err(GradCheckError::NoCleanInstance(MAX_ATTEMPTS));
            }
            let mut p = base.clone();
            for (_, t) in p.named_mut() {
                t.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
            }
            let out = forward(label.center, &p, grid)?;
            if loss_kink_margin(out.stages(), label, &loss_cfg) >= cfg.kink_margin {
                break p;
            }
        };
        let out = forward(label.center, &params, grid)?;
        let lb = overall_loss(out.stages(), label, &loss_cfg)?;
        let grads = backward(&params, grid, &out, [&lb.grad_init, &lb.grad_coarse, &lb.grad_iter1, &lb.grad_iter2])?;
        let signature = |o: &crate::model::ModelOutputs| {
            let mut s = o.branch_signature();
            s.extend(loss_signature(o.stages(), label, &loss_cfg));
            s
        };
        let sig = signature(&out);
        let eval = |p: &ModelParams, g: &FeatureGrid| -> Result<(f64, bool), GradCheckError> {
            let o = forward(label.center, p, g)?;
            let l = overall_loss(o.stages(), label, &loss_cfg)?;
            Ok((l.l_overall, signature(&o) == sig))
        };
        let n_tensors = names.len() - 1;
        for ti in 0..n_tensors {
            let len = params.named()[ti].1.len();
            for k in 0..len {
                let mut q = params.clone();
                q.named_mut()[ti].1.data[k] += h;
                let (fp, sp) = eval(&q, grid)?;
                q.named_mut()[ti].1.data[k] -= 2.0 * h;
                let (fm, sm) = eval(&q, grid)?;
                if !(sp && sm) {
                    tallies[ti].rejected += 1;
                    continue;
                }
                tallies[ti].record(grads.params.named()[ti].1.data[k], (fp - fm) / (2.0 * h));
            }
        }
        let gi = n_tensors;
        for k in 0..grid.values.len() {
            let mut g = grid.clone();
            g.values[k] += h;
            let (fp, sp) = eval(&params, &g)?;
            g.values[k] -= 2.0 * h;
            let (fm, sm) = eval(&params, &g)?;
            if !(sp && sm) {
                tallies[gi].rejected += 1;
                continue;
            }
            tallies[gi].record(grads.grid[k], (fp - fm) / (2.0 * h));
        }
    }
    Ok(tallies.into_iter().zip(&names).map(|(t, n)| t.finish(&format!("model.{n}"), cfg.tolerance)).collect())
}

pub fn run_grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport, GradCheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fx = fixture(cfg, cfg.loss_instances.max(cfg.model_instances))?;
    let mut checks = check_losses(cfg, &Fixture { labels: fx.labels[..cfg.loss_instances].to_vec(), grids: Vec::new() }, &mut rng)?;
    let model_fx = Fixture {
        labels: fx.labels[..cfg.model_instances].to_vec(),
        grids: fx.grids[..cfg.model_instances].to_vec(),
    };
    checks.extend(check_model(cfg, &model_fx, &mut rng)?);
    let passed = checks.iter().all(|c| c.passed);
    Ok(GradCheckReport { config: cfg.clone(), checks, passed })
}
