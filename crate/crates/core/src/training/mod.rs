//! Synthetic data, the training loop, evaluation and ablations.

mod ablation;
mod encoder;
mod eval;
mod optim;
mod synth;

pub use ablation::{run_ablation, AblationConfig, AblationRow, AblationSuite, AblationTable, EvalSummary};
pub use encoder::{encode_instance, mask_boundary_points, EncoderConfig};
pub use eval::{evaluate, measure_throughput, EvalOptions, EvalReport, StageMetrics, Throughput};
pub use optim::{lr_at, Optimizer, OptimizerKind};
pub use synth::{generate_dataset, ShapeFamily, SynthConfig, SyntheticInstance};

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometryError;
use crate::labeling::{build_label, LabelError, LabeledInstance, MdaConfig};
use crate::losses::{overall_loss, LossConfig, LossError};
use crate::model::{backward, forward, FeatureGrid, ModelConfig, ModelError, ModelParams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("gave up after {rejections} rejected shapes ({generated} generated)")]
    GenerationExhausted { rejections: usize, generated: usize },
    #[error("training diverged at epoch {epoch}, instance {instance}: {diagnostics}")]
    DivergenceDetected { epoch: usize, instance: usize, loss: f64, diagnostics: String },
    #[error("no training data")]
    EmptyData,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    /// Epochs (0-based) at which the rate is multiplied by `lr_decay`.
    pub milestones: Vec<usize>,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Feature grids are updated by plain gradient steps at
    /// `learning_rate * grid_lr_scale`; 0 keeps the encoder output fixed.
    pub grid_lr_scale: f64,
    pub image_size: [usize; 2],
    pub mda: MdaConfig,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub encoder: EncoderConfig,
    /// Evaluate every this many epochs (0 = never).
    pub eval_every: usize,
    /// Abort when any instance loss exceeds this or is non-finite.
    pub divergence_threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            epochs: 150,
            learning_rate: 1e-4,
            lr_decay: 0.5,
            milestones: vec![80, 120],
            batch_size: 8,
            optimizer: OptimizerKind::Sgd,
            grid_lr_scale: 0.0,
            image_size: [128, 128],
            mda: MdaConfig { n_vertices: model.n_vertices, ..MdaConfig::default() },
            loss: LossConfig::default(),
            encoder: EncoderConfig { grid_size: [32, 32], channels: model.channels },
            model,
            eval_every: 1,
            divergence_threshold: 1e6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale recipe: N = 32, C = 8, 32x32 grid, Adam.
    pub fn toy() -> Self {
        let model = ModelConfig::toy();
        Self {
            learning_rate: 2e-3,
            batch_size: 4,
            optimizer: OptimizerKind::adam(),
            mda: MdaConfig { n_vertices: model.n_vertices, ..MdaConfig::default() },
            encoder: EncoderConfig { grid_size: [32, 32], channels: model.channels },
            model,
            ..Self::default()
        }
    }

    /// Validates and propagates shared settings (seed, circle start angle).
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(c.learning_rate >= 0.0 && c.learning_rate.is_finite()) {
            return bad(format!("learning_rate = {}", c.learning_rate));
        }
        if !(c.lr_decay > 0.0 && c.lr_decay.is_finite()) || !(c.grid_lr_scale >= 0.0) {
            return bad("lr_decay must be positive and grid_lr_scale non-negative".into());
        }
        if c.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if c.mda.n_vertices != c.model.n_vertices {
            return bad(format!("mda.n_vertices {} != model.n_vertices {}", c.mda.n_vertices, c.model.n_vertices));
        }
        if c.encoder.channels != c.model.channels {
            return bad(format!("encoder.channels {} != model.channels {}", c.encoder.channels, c.model.channels));
        }
        c.mda.validate()?;
        c.model.circle_start_angle = c.mda.start_angle;
        c.model.validate()?;
        Ok(c)
    }
}

/// A labeled instance with its encoded feature grid.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: usize,
    pub label: LabeledInstance,
    pub grid: FeatureGrid,
}

pub fn prepare_samples(
    instances: &[SyntheticInstance],
    mda: &MdaConfig,
    image_size: [usize; 2],
    encoder: &EncoderConfig,
) -> Result<Vec<TrainSample>> {
    instances
        .iter()
        .map(|inst| {
            Ok(TrainSample {
                id: inst.id,
                label: build_label(&inst.polygon, mda)?,
                grid: encode_instance(&inst.polygon, image_size, encoder)?,
            })
        })
        .collect()
}

/// Same grids, labels rebuilt with another alignment config.
pub fn relabel(samples: &[TrainSample], mda: &MdaConfig) -> Result<Vec<TrainSample>> {
    samples
        .iter()
        .map(|s| Ok(TrainSample { id: s.id, label: build_label(&s.label.raw_polygon, mda)?, grid: s.grid.clone() }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_init: f64,
    pub l_coarse: f64,
    pub l_iter1: f64,
    pub l_iter2: f64,
    pub l_overall: f64,
    pub lr: f64,
    pub eval_iou_initial: Option<f64>,
    pub eval_iou_coarse: Option<f64>,
    pub eval_iou_final: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    /// The training grids after any grid updates.
    pub grids: Vec<FeatureGrid>,
    /// The resolved config actually used.
    pub config: TrainConfig,
}

fn add_scaled(acc: &mut ModelParams, g: &ModelParams, s: f64) {
    for ((_, a), (_, b)) in acc.named_mut().into_iter().zip(g.named()) {
        for (x, y) in a.data.iter_mut().zip(&b.data) {
            *x += s * y;
        }
    }
}

/// Minimizes the weighted four-stage objective. Losses in the history are
/// means over the epoch's instances, measured before each batch update.
pub fn train(data: &[TrainSample], eval: Option<&[TrainSample]>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let cfg = cfg.resolved()?;
    if data.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let params = ModelParams::new(cfg.model.clone())?;
    train_from(params, data, eval, &cfg)
}

/// Continues training from `params` (whose config must match `cfg.model`).
pub fn train_from(
    mut params: ModelParams,
    data: &[TrainSample],
    eval: Option<&[TrainSample]>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let cfg = cfg.resolved()?;
    if data.is_empty() {
        return Err(TrainError::EmptyData);
    }
    params.check_shapes()?;
    let mut grids: Vec<FeatureGrid> = data.iter().map(|s| s.grid.clone()).collect();
    let mut opt = Optimizer::new(cfg.optimizer, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e_ed0f_7a1e);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let eval_opts = EvalOptions { image_size: cfg.image_size, ..EvalOptions::default() };
    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg.learning_rate, cfg.lr_decay, &cfg.milestones, epoch);
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 5];
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = params.zeros_like();
            for &i in batch {
                let s = &data[i];
                let out = forward(s.label.center, &params, &grids[i])?;
                let lb = overall_loss(out.stages(), &s.label, &cfg.loss)?;
                if !lb.l_overall.is_finite() || lb.l_overall > cfg.divergence_threshold {
                    return Err(TrainError::DivergenceDetected {
                        epoch,
                        instance: s.id,
                        loss: lb.l_overall,
                        diagnostics: format!(
                            "l_init={} l_coarse={} l_iter1={} l_iter2={} lr={lr}",
                            lb.l_init, lb.l_coarse, lb.l_iter1, lb.l_iter2
                        ),
                    });
                }
                for (k, v) in [lb.l_init, lb.l_coarse, lb.l_iter1, lb.l_iter2, lb.l_overall].into_iter().enumerate() {
                    sums[k] += v;
                }
                let g = backward(&params, &grids[i], &out, [&lb.grad_init, &lb.grad_coarse, &lb.grad_iter1, &lb.grad_iter2])?;
                add_scaled(&mut acc, &g.params, 1.0 / batch.len() as f64);
                if cfg.grid_lr_scale > 0.0 {
                    let step = lr * cfg.grid_lr_scale;
                    for (v, d) in grids[i].values.iter_mut().zip(&g.grid) {
                        *v -= step * d;
                    }
                }
            }
            opt.step(&mut params, &acc, lr);
        }
        let n = data.len() as f64;
        let (mut ei, mut ec, mut ef) = (None, None, None);
        if cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) {
            let set: Vec<TrainSample>;
            let target = match eval {
                Some(e) => e,
                None => {
                    set = data.iter().zip(&grids).map(|(s, g)| TrainSample { grid: g.clone(), ..s.clone() }).collect();
                    &set
                }
            };
            let r = evaluate(&params, target, &eval_opts)?;
            (ei, ec, ef) = (Some(r.initial.mask_iou), Some(r.coarse.mask_iou), Some(r.final_stage.mask_iou));
        }
        history.push(EpochRecord {
            epoch,
            l_init: sums[0] / n,
            l_coarse: sums[1] / n,
            l_iter1: sums[2] / n,
            l_iter2: sums[3] / n,
            l_overall: sums[4] / n,
            lr,
            eval_iou_initial: ei,
            eval_iou_coarse: ec,
            eval_iou_final: ef,
        });
    }
    Ok(TrainOutcome { params, history, grids, config: cfg })
}

/// Writes the metric history as CSV, preceded by a `# <config json>` line.
pub fn write_history_csv(mut w: impl Write, config: &serde_json::Value, history: &[EpochRecord]) -> Result<()> {
    writeln!(w, "# {}", serde_json::to_string(config).expect("json value serializes"))?;
    let mut cw = csv::Writer::from_writer(w);
    for r in history {
        cw.serialize(r)?;
    }
    cw.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
