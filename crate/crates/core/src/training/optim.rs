use serde::{Deserialize, Serialize};

use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        Self::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter state, flattened in [`ModelParams::named`] order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &ModelParams) -> Self {
        let n = params.n_params();
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Momentum { .. } => (vec![0.0; n], Vec::new()),
            OptimizerKind::Adam { .. } => (vec![0.0; n], vec![0.0; n]),
        };
        Self { kind, m, v, t: 0 }
    }

    /// One update with learning rate `lr`; `lr = 0` leaves parameters untouched.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        self.t += 1;
        let mut k = 0;
        let t = self.t as i32;
        for ((_, p), (_, g)) in params.named_mut().into_iter().zip(grads.named()) {
            for (x, &gi) in p.data.iter_mut().zip(&g.data) {
                match self.kind {
                    OptimizerKind::Sgd => *x -= lr * gi,
                    OptimizerKind::Momentum { beta } => {
                        self.m[k] = beta * self.m[k] + gi;
                        *x -= lr * self.m[k];
                    }
                    OptimizerKind::Adam { beta1, beta2, eps } => {
                        self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * gi;
                        self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * gi * gi;
                        let mh = self.m[k] / (1.0 - beta1.powi(t));
                        let vh = self.v[k] / (1.0 - beta2.powi(t));
                        *x -= lr * mh / (vh.sqrt() + eps);
                    }
                }
                k += 1;
            }
        }
    }
}

/// `lr0 * factor^(number of milestones <= epoch)`, epochs counted from 0.
pub fn lr_at(lr0: f64, factor: f64, milestones: &[usize], epoch: usize) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= epoch).count();
    lr0 * factor.powi(passed as i32)
}
