use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Result, TrainSample};
use crate::geometry::{boundary_iou, mask_iou, rasterize, rasterize_points, Contour};
use crate::model::{forward, global_deform, init_contour, refine, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub image_size: [usize; 2],
    pub measure_throughput: bool,
    /// Timed passes per stage; the fastest pass is reported.
    pub throughput_repeats: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { image_size: [128, 128], measure_throughput: false, throughput_repeats: 5 }
    }
}

/// Means over instances for one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct StageMetrics {
    pub mask_iou: f64,
    pub boundary_iou_d1: f64,
    pub boundary_iou_d2: f64,
    /// `|dx| + |dy|` between vertex `i` and label vertex `i`, averaged over
    /// vertices, in pixels.
    pub vertex_l1: f64,
}

/// Instances per second when running the pipeline up to each stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub initial: f64,
    pub coarse: f64,
    #[serde(rename = "final")]
    pub final_stage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_instances: usize,
    pub initial: StageMetrics,
    pub coarse: StageMetrics,
    #[serde(rename = "final")]
    pub final_stage: StageMetrics,
    pub throughput: Option<Throughput>,
}

impl EvalReport {
    pub fn mean_mask_iou(&self) -> f64 {
        self.final_stage.mask_iou
    }

    pub fn mean_vertex_l1(&self) -> f64 {
        self.final_stage.vertex_l1
    }

    pub fn stages(&self) -> [(&'static str, &StageMetrics); 3] {
        [("initial", &self.initial), ("coarse", &self.coarse), ("final", &self.final_stage)]
    }
}

fn vertex_l1(pred: &Contour, gt: &Contour) -> f64 {
    pred.points().iter().zip(gt.points()).map(|(p, g)| (*p - *g).l1()).sum::<f64>() / pred.len().max(1) as f64
}

/// Rasterizes every stage against the ground-truth polygon and averages.
pub fn evaluate(params: &ModelParams, data: &[TrainSample], opts: &EvalOptions) -> Result<EvalReport> {
    let [h, w] = opts.image_size;
    let mut acc = [StageMetrics::default(); 3];
    for s in data {
        let out = forward(s.label.center, params, &s.grid)?;
        let gt = rasterize(&s.label.raw_polygon, h, w);
        for (m, c) in acc.iter_mut().zip([&out.initial, &out.coarse, &out.iter2]) {
            let pred = rasterize_points(c.points(), h, w);
            m.mask_iou += mask_iou(&pred, &gt)?;
            m.boundary_iou_d1 += boundary_iou(&pred, &gt, 1)?;
            m.boundary_iou_d2 += boundary_iou(&pred, &gt, 2)?;
            m.vertex_l1 += vertex_l1(c, &s.label.gt_contour);
        }
    }
    let n = data.len().max(1) as f64;
    for m in acc.iter_mut() {
        m.mask_iou /= n;
        m.boundary_iou_d1 /= n;
        m.boundary_iou_d2 /= n;
        m.vertex_l1 /= n;
    }
    let throughput = if opts.measure_throughput && !data.is_empty() {
        Some(measure_throughput(params, data, opts.throughput_repeats)?)
    } else {
        None
    };
    Ok(EvalReport { n_instances: data.len(), initial: acc[0], coarse: acc[1], final_stage: acc[2], throughput })
}

/// Times the pipeline truncated after each stage. Passes are interleaved
/// and the fastest of `repeats` is kept, which damps scheduler noise.
pub fn measure_throughput(params: &ModelParams, data: &[TrainSample], repeats: usize) -> Result<Throughput> {
    let cfg = &params.config;
    let run = |stage: usize| -> Result<f64> {
        let t = Instant::now();
        let mut sink = 0.0;
        for s in data {
            let c = s.label.center;
            let mut x = init_contour(c, params, &s.grid)?;
            if stage >= 1 {
                x = global_deform(&x, c, params, &s.grid)?;
            }
            if stage >= 2 && cfg.refine {
                x = refine(&x, &params.refine[0], cfg, &s.grid)?;
                x = refine(&x, &params.refine[1], cfg, &s.grid)?;
            }
            sink += x[0].x;
        }
        std::hint::black_box(sink);
        Ok(t.elapsed().as_secs_f64())
    };
    let mut best = [f64::INFINITY; 3];
    for _ in 0..repeats.max(1) {
        for (stage, b) in best.iter_mut().enumerate() {
            *b = b.min(run(stage)?);
        }
    }
    let ips = |t: f64| data.len() as f64 / t.max(1e-12);
    Ok(Throughput { initial: ips(best[0]), coarse: ips(best[1]), final_stage: ips(best[2]) })
}
