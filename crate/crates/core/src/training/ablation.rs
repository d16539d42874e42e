use serde::{Deserialize, Serialize};

use super::{evaluate, generate_dataset, prepare_samples, relabel, train, EvalOptions, EvalReport, Result, SynthConfig, TrainConfig, TrainError};
use crate::losses::LastStageLoss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSuite {
    /// Last-stage supervision: smooth-L1, chamfer, DML.
    Loss,
    /// Aligned directions M in {1, 2, 4, 8}.
    AlignmentM,
    /// Baseline, +learnable init and global deformation, +alignment, +DML.
    Components,
}

impl std::str::FromStr for AblationSuite {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "loss" => Ok(Self::Loss),
            "alignment_m" | "alignment" | "m" => Ok(Self::AlignmentM),
            "components" => Ok(Self::Components),
            _ => Err(format!("unknown ablation suite '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub train: TrainConfig,
    /// `n_instances` is the training split; `n_eval` more are held out.
    pub synth: SynthConfig,
    pub n_eval: usize,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { train: TrainConfig::toy(), synth: SynthConfig::default(), n_eval: 50, seeds: vec![0, 1, 2] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalSummary {
    pub mask_iou: f64,
    pub boundary_iou_d1: f64,
    pub boundary_iou_d2: f64,
    pub vertex_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub config: TrainConfig,
    pub reports: Vec<EvalReport>,
    /// Final-stage metrics averaged over seeds.
    pub mean: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub suite: AblationSuite,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

fn variants(suite: AblationSuite, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let with = |f: &dyn Fn(&mut TrainConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match suite {
        AblationSuite::Loss => [("smooth_l1", LastStageLoss::SmoothL1), ("chamfer", LastStageLoss::Chamfer), ("dml", LastStageLoss::Dml)]
            .into_iter()
            .map(|(n, l)| (n.to_string(), with(&|c| c.loss.last_stage = l)))
            .collect(),
        AblationSuite::AlignmentM => [1usize, 2, 4, 8]
            .into_iter()
            .map(|m| (format!("m{m}"), with(&|c| c.mda.m_aligned = m)))
            .collect(),
        AblationSuite::Components => {
            let arch = |c: &mut TrainConfig, learned: bool| {
                c.model.learnable_init = learned;
                c.model.global_deform = learned;
            };
            vec![
                (
                    "baseline".into(),
                    with(&|c| {
                        arch(c, false);
                        c.mda.m_aligned = 1;
                        c.loss.last_stage = LastStageLoss::SmoothL1;
                    }),
                ),
                (
                    "+arch".into(),
                    with(&|c| {
                        arch(c, true);
                        c.mda.m_aligned = 1;
                        c.loss.last_stage = LastStageLoss::SmoothL1;
                    }),
                ),
                (
                    "+mda".into(),
                    with(&|c| {
                        arch(c, true);
                        c.mda.m_aligned = 4;
                        c.loss.last_stage = LastStageLoss::SmoothL1;
                    }),
                ),
                (
                    "+dml".into(),
                    with(&|c| {
                        arch(c, true);
                        c.mda.m_aligned = 4;
                        c.loss.last_stage = LastStageLoss::Dml;
                    }),
                ),
            ]
        }
    }
}

/// Trains every variant on the same data for each seed and evaluates on a
/// held-out split. Throughput is not measured, so tables are reproducible.
pub fn run_ablation(suite: AblationSuite, cfg: &AblationConfig) -> Result<AblationTable> {
    if cfg.seeds.is_empty() {
        return Err(TrainError::InvalidConfig("ablation needs at least one seed".into()));
    }
    let vars = variants(suite, &cfg.train);
    let mut rows: Vec<AblationRow> = vars
        .iter()
        .map(|(name, c)| Ok(AblationRow { name: name.clone(), config: c.resolved()?, reports: Vec::new(), mean: EvalSummary::default() }))
        .collect::<Result<_>>()?;
    for &seed in &cfg.seeds {
        let synth = SynthConfig { n_instances: cfg.synth.n_instances + cfg.n_eval, seed, ..cfg.synth.clone() };
        let instances = generate_dataset(&synth)?;
        let base = &cfg.train;
        let all = prepare_samples(&instances, &base.mda, base.image_size, &base.encoder)?;
        for row in rows.iter_mut() {
            let mut tc = row.config.clone();
            tc.seed = seed;
            tc.model.seed = seed;
            tc.eval_every = 0;
            let samples = relabel(&all, &tc.mda)?;
            let (tr, ev) = samples.split_at(cfg.synth.n_instances);
            let outcome = train(tr, None, &tc)?;
            let opts = EvalOptions { image_size: tc.image_size, measure_throughput: false, ..EvalOptions::default() };
            row.reports.push(evaluate(&outcome.params, ev, &opts)?);
        }
    }
    for row in rows.iter_mut() {
        let k = row.reports.len() as f64;
        let mut m = EvalSummary::default();
        for r in &row.reports {
            m.mask_iou += r.final_stage.mask_iou / k;
            m.boundary_iou_d1 += r.final_stage.boundary_iou_d1 / k;
            m.boundary_iou_d2 += r.final_stage.boundary_iou_d2 / k;
            m.vertex_l1 += r.final_stage.vertex_l1 / k;
        }
        row.mean = m;
    }
    Ok(AblationTable { suite, seeds: cfg.seeds.clone(), rows })
}
