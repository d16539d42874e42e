//! The toy contour network: center feature → initial contour → global
//! deformation → two circular-convolution refinement modules, with
//! hand-written reverse mode.

mod checkpoint;
mod grid;
mod layers;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use grid::{sample_features, FeatureGrid, SampleCache};
pub use layers::{circular_conv, circular_conv_backward, relu, relu_backward, Dense, Tensor};

use std::hash::{Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Contour, Point2};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("circular kernel of width {width} needs at least {width} vertices, got {n}")]
    KernelTooWide { n: usize, width: usize },
    #[error("forward cache does not match the current parameters or grid")]
    StaleCache,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Contour vertices N.
    pub n_vertices: usize,
    /// Feature channels C; must match the grid.
    pub channels: usize,
    pub init_hidden: usize,
    /// Channels produced by each refinement convolution.
    pub refine_channels: usize,
    pub conv_width: usize,
    /// Raw head outputs are multiplied by these to give pixel offsets.
    pub init_offset_scale: f64,
    pub global_offset_scale: f64,
    pub refine_offset_scale: f64,
    /// When false the initial contour is a fixed circle around the center.
    pub learnable_init: bool,
    pub global_deform: bool,
    /// When false both refinement stages are identities.
    pub refine: bool,
    pub circle_radius: f64,
    pub circle_start_angle: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_vertices: 128,
            channels: 64,
            init_hidden: 64,
            refine_channels: 16,
            conv_width: 9,
            init_offset_scale: 32.0,
            global_offset_scale: 8.0,
            refine_offset_scale: 4.0,
            learnable_init: true,
            global_deform: true,
            refine: true,
            circle_radius: 32.0,
            circle_start_angle: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Desk-scale sizes: N = 32, C = 8.
    pub fn toy() -> Self {
        Self { n_vertices: 32, channels: 8, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.n_vertices < 3 {
            return bad(format!("n_vertices = {} < 3", self.n_vertices));
        }
        if self.channels == 0 || self.init_hidden == 0 || self.refine_channels == 0 {
            return bad("layer widths must be positive".into());
        }
        if self.conv_width.is_multiple_of(2) {
            return bad(format!("conv_width = {} must be odd", self.conv_width));
        }
        if self.refine && self.n_vertices < self.conv_width {
            return Err(ModelError::KernelTooWide { n: self.n_vertices, width: self.conv_width });
        }
        let scales = [self.init_offset_scale, self.global_offset_scale, self.refine_offset_scale, self.circle_radius];
        if scales.iter().any(|s| !s.is_finite()) || !self.circle_start_angle.is_finite() {
            return bad("non-finite scale".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineParams {
    /// `[refine_channels, C + 2, conv_width]`
    pub kernel: Tensor,
    pub conv_bias: Tensor,
    /// `refine_channels + 2 → 2`
    pub head: Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub init_hidden: Dense,
    pub init_out: Dense,
    /// `(N + 1) C → 2N`
    pub global_hidden: Dense,
    pub global_out: Dense,
    pub refine: [RefineParams; 2],
}

impl ModelParams {
    /// Offset-producing layers start at zero; the rest are seeded uniform.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (n, c, cm) = (config.n_vertices, config.channels, config.refine_channels);
        let init_hidden = Dense::random(c, config.init_hidden, &mut rng);
        let init_out = Dense::zeros(config.init_hidden, 2 * n);
        let global_hidden = Dense::random((n + 1) * c, 2 * n, &mut rng);
        let global_out = Dense::zeros(2 * n, 2 * n);
        let module = |rng: &mut ChaCha8Rng| RefineParams {
            kernel: Tensor::uniform(&[cm, c + 2, config.conv_width], (c + 2) * config.conv_width, rng),
            conv_bias: Tensor::uniform(&[cm], (c + 2) * config.conv_width, rng),
            head: Dense::zeros(cm + 2, 2),
        };
        let refine = [module(&mut rng), module(&mut rng)];
        Ok(Self { config, init_hidden, init_out, global_hidden, global_out, refine })
    }

    /// Same layout, every value zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.named_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![
            ("init.hidden.weight".to_string(), &self.init_hidden.weight),
            ("init.hidden.bias".into(), &self.init_hidden.bias),
            ("init.out.weight".into(), &self.init_out.weight),
            ("init.out.bias".into(), &self.init_out.bias),
            ("global.hidden.weight".into(), &self.global_hidden.weight),
            ("global.hidden.bias".into(), &self.global_hidden.bias),
            ("global.out.weight".into(), &self.global_out.weight),
            ("global.out.bias".into(), &self.global_out.bias),
        ];
        for (k, r) in self.refine.iter().enumerate() {
            let p = format!("refine{}", k + 1);
            v.push((format!("{p}.conv.kernel"), &r.kernel));
            v.push((format!("{p}.conv.bias"), &r.conv_bias));
            v.push((format!("{p}.head.weight"), &r.head.weight));
            v.push((format!("{p}.head.bias"), &r.head.bias));
        }
        v
    }

    /// Same order as [`ModelParams::named`].
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = vec![
            ("init.hidden.weight".to_string(), &mut self.init_hidden.weight),
            ("init.hidden.bias".into(), &mut self.init_hidden.bias),
            ("init.out.weight".into(), &mut self.init_out.weight),
            ("init.out.bias".into(), &mut self.init_out.bias),
            ("global.hidden.weight".into(), &mut self.global_hidden.weight),
            ("global.hidden.bias".into(), &mut self.global_hidden.bias),
            ("global.out.weight".into(), &mut self.global_out.weight),
            ("global.out.bias".into(), &mut self.global_out.bias),
        ];
        for (k, r) in self.refine.iter_mut().enumerate() {
            let p = format!("refine{}", k + 1);
            v.push((format!("{p}.conv.kernel"), &mut r.kernel));
            v.push((format!("{p}.conv.bias"), &mut r.conv_bias));
            v.push((format!("{p}.head.weight"), &mut r.head.weight));
            v.push((format!("{p}.head.bias"), &mut r.head.bias));
        }
        v
    }

    pub fn n_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Checks every tensor shape against the config.
    pub fn check_shapes(&self) -> Result<()> {
        let reference = Self::new(self.config.clone())?;
        for ((name, a), (_, b)) in self.named().into_iter().zip(reference.named()) {
            if a.shape != b.shape || a.data.len() != b.data.len() {
                return Err(ModelError::ShapeMismatch(format!("{name}: {:?} expected {:?}", a.shape, b.shape)));
            }
        }
        Ok(())
    }
}

fn fingerprint(params: &ModelParams, grid: &FeatureGrid) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for (_, t) in params.named() {
        for v in &t.data {
            v.to_bits().hash(&mut h);
        }
    }
    (grid.height, grid.width, grid.channels, grid.cell_size.to_bits()).hash(&mut h);
    for v in &grid.values {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

fn check_grid(cfg: &ModelConfig, grid: &FeatureGrid) -> Result<()> {
    if grid.channels != cfg.channels {
        return Err(ModelError::ShapeMismatch(format!("grid has {} channels, model expects {}", grid.channels, cfg.channels)));
    }
    Ok(())
}

fn offsets_to_points(o: &[f64], scale: f64) -> impl Iterator<Item = Point2> + '_ {
    o.chunks_exact(2).map(move |c| Point2::new(c[0] * scale, c[1] * scale))
}

fn flatten_scaled(g: &[Point2], scale: f64) -> Vec<f64> {
    g.iter().flat_map(|p| [p.x * scale, p.y * scale]).collect()
}

#[derive(Debug, Clone)]
struct CenterCache {
    feat: Vec<f64>,
    sample: SampleCache,
}

#[derive(Debug, Clone)]
struct InitCache {
    pre: Vec<f64>,
    act: Vec<f64>,
}

#[derive(Debug, Clone)]
struct GlobalCache {
    z: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    samples: Vec<SampleCache>,
}

#[derive(Debug, Clone)]
struct RefineCache {
    input: Vec<Point2>,
    z: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    rel: Vec<Point2>,
    mean: Point2,
    scale: f64,
    /// argmin x, argmax x, argmin y, argmax y
    ext: [usize; 4],
    samples: Vec<SampleCache>,
}

/// The four stage contours plus everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ModelOutputs {
    pub initial: Contour,
    pub coarse: Contour,
    pub iter1: Contour,
    pub iter2: Contour,
    center: CenterCache,
    init: Option<InitCache>,
    global: Option<GlobalCache>,
    refine: Option<[RefineCache; 2]>,
    fingerprint: u64,
}

impl ModelOutputs {
    pub fn stages(&self) -> [&Contour; 4] {
        [&self.initial, &self.coarse, &self.iter1, &self.iter2]
    }

    /// Discrete forward state: ReLU patterns, sampled cells, clamps and bbox
    /// extremes. The forward map is smooth wherever this is locally constant.
    pub fn branch_signature(&self) -> Vec<i64> {
        let mut s = Vec::new();
        let relu_bits = |s: &mut Vec<i64>, pre: &[f64]| s.extend(pre.iter().map(|&v| (v > 0.0) as i64));
        s.extend(self.center.sample.branch());
        if let Some(c) = &self.init {
            relu_bits(&mut s, &c.pre);
        }
        if let Some(c) = &self.global {
            relu_bits(&mut s, &c.pre);
            c.samples.iter().for_each(|x| s.extend(x.branch()));
        }
        if let Some(rs) = &self.refine {
            for c in rs {
                relu_bits(&mut s, &c.pre);
                c.samples.iter().for_each(|x| s.extend(x.branch()));
                s.extend(c.ext.iter().map(|&i| i as i64));
            }
        }
        s
    }
}

/// Parameter gradients (same layout as the parameters) and the grid gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub params: ModelParams,
    pub grid: Vec<f64>,
}

fn init_forward(center: Point2, cf: &[f64], params: &ModelParams) -> (Vec<Point2>, Option<InitCache>) {
    let cfg = &params.config;
    if !cfg.learnable_init {
        let n = cfg.n_vertices;
        let pts = (0..n)
            .map(|i| {
                let a = cfg.circle_start_angle + std::f64::consts::TAU * i as f64 / n as f64;
                center + Point2::from_polar(cfg.circle_radius, a)
            })
            .collect();
        return (pts, None);
    }
    let pre = params.init_hidden.forward(cf);
    let act = relu(&pre);
    let o = params.init_out.forward(&act);
    let pts = offsets_to_points(&o, cfg.init_offset_scale).map(|d| center + d).collect();
    (pts, Some(InitCache { pre, act }))
}

fn global_forward(
    initial: &[Point2],
    cf: &[f64],
    params: &ModelParams,
    grid: &FeatureGrid,
) -> (Vec<Point2>, Option<GlobalCache>) {
    let cfg = &params.config;
    if !cfg.global_deform {
        return (initial.to_vec(), None);
    }
    let (mut z, samples) = sample_features(grid, initial);
    z.extend_from_slice(cf);
    let pre = params.global_hidden.forward(&z);
    let act = relu(&pre);
    let o = params.global_out.forward(&act);
    let pts = initial.iter().zip(offsets_to_points(&o, cfg.global_offset_scale)).map(|(&p, d)| p + d).collect();
    (pts, Some(GlobalCache { z, pre, act, samples }))
}

/// Sum of the values in sorted order, so the result does not depend on
/// vertex order.
fn order_free_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

fn refine_forward(
    x: &[Point2],
    rp: &RefineParams,
    cfg: &ModelConfig,
    grid: &FeatureGrid,
) -> Result<(Vec<Point2>, RefineCache)> {
    let n = x.len();
    let c = grid.channels;
    let cin = c + 2;
    let cm = rp.conv_bias.len();
    let mean = Point2::new(
        order_free_sum(x.iter().map(|p| p.x).collect()) / n as f64,
        order_free_sum(x.iter().map(|p| p.y).collect()) / n as f64,
    );
    let mut ext = [0usize; 4];
    for (i, p) in x.iter().enumerate() {
        if p.x < x[ext[0]].x {
            ext[0] = i;
        }
        if p.x > x[ext[1]].x {
            ext[1] = i;
        }
        if p.y < x[ext[2]].y {
            ext[2] = i;
        }
        if p.y > x[ext[3]].y {
            ext[3] = i;
        }
    }
    let (w, h) = (x[ext[1]].x - x[ext[0]].x, x[ext[3]].y - x[ext[2]].y);
    // +1 keeps degenerate (collapsed) contours finite
    let scale = (w * w + h * h + 1.0).sqrt();
    let rel: Vec<Point2> = x.iter().map(|&p| Point2::new((p.x - mean.x) / scale, (p.y - mean.y) / scale)).collect();
    let (feats, samples) = sample_features(grid, x);
    let mut z = Vec::with_capacity(n * cin);
    for i in 0..n {
        z.extend_from_slice(&feats[i * c..(i + 1) * c]);
        z.push(rel[i].x);
        z.push(rel[i].y);
    }
    let pre = circular_conv(&z, n, cin, &rp.kernel, &rp.conv_bias.data)?;
    let act = relu(&pre);
    let mut out = Vec::with_capacity(n);
    let mut hin = vec![0.0; cm + 2];
    for i in 0..n {
        hin[..cm].copy_from_slice(&act[i * cm..(i + 1) * cm]);
        hin[cm] = rel[i].x;
        hin[cm + 1] = rel[i].y;
        let o = rp.head.forward(&hin);
        out.push(x[i] + Point2::new(o[0], o[1]) * cfg.refine_offset_scale);
    }
    Ok((out, RefineCache { input: x.to_vec(), z, pre, act, rel, mean, scale, ext, samples }))
}

fn refine_backward(
    cache: &RefineCache,
    rp: &RefineParams,
    cfg: &ModelConfig,
    grid: &FeatureGrid,
    dout: &[Point2],
    grad: &mut RefineParams,
    grid_grad: &mut [f64],
) -> Vec<Point2> {
    let x = &cache.input;
    let n = x.len();
    let c = grid.channels;
    let cin = c + 2;
    let cm = rp.conv_bias.len();
    let mut dx = dout.to_vec();
    let mut drel = vec![Point2::ZERO; n];
    let mut dact = vec![0.0; n * cm];
    let mut hin = vec![0.0; cm + 2];
    for i in 0..n {
        hin[..cm].copy_from_slice(&cache.act[i * cm..(i + 1) * cm]);
        hin[cm] = cache.rel[i].x;
        hin[cm + 1] = cache.rel[i].y;
        let s = cfg.refine_offset_scale;
        let dh = rp.head.backward(&hin, &[dout[i].x * s, dout[i].y * s], &mut grad.head);
        dact[i * cm..(i + 1) * cm].copy_from_slice(&dh[..cm]);
        drel[i] = drel[i] + Point2::new(dh[cm], dh[cm + 1]);
    }
    let dpre = relu_backward(&cache.pre, &dact);
    let dz = circular_conv_backward(&cache.z, n, cin, &rp.kernel, &dpre, &mut grad.kernel, &mut grad.conv_bias.data);
    for j in 0..n {
        let row = &dz[j * cin..(j + 1) * cin];
        dx[j] = dx[j] + grid.sample_backward(&cache.samples[j], &row[..c], grid_grad);
        drel[j] = drel[j] + Point2::new(row[c], row[c + 1]);
    }
    // rel_i = (x_i - mean) / scale
    let s = cache.scale;
    let mut dmean = Point2::ZERO;
    let mut dscale = 0.0;
    for i in 0..n {
        dx[i] = dx[i] + drel[i] * (1.0 / s);
        dmean = dmean - drel[i] * (1.0 / s);
        dscale -= drel[i].dot(x[i] - cache.mean) / (s * s);
    }
    let dm = dmean * (1.0 / n as f64);
    for d in dx.iter_mut() {
        *d = *d + dm;
    }
    let [i0, i1, j0, j1] = cache.ext;
    let gw = dscale * (x[i1].x - x[i0].x) / s;
    let gh = dscale * (x[j1].y - x[j0].y) / s;
    dx[i1].x += gw;
    dx[i0].x -= gw;
    dx[j1].y += gh;
    dx[j0].y -= gh;
    dx
}

/// Initial contour: `center` plus head offsets of the center feature (or the
/// fixed circle when the head is disabled).
pub fn init_contour(center: Point2, params: &ModelParams, grid: &FeatureGrid) -> Result<Contour> {
    check_grid(&params.config, grid)?;
    let (cf, _) = grid.sample(center);
    Ok(Contour(init_forward(center, &cf, params).0))
}

/// Coarse contour: all vertex features plus the center feature, two dense
/// layers, offsets added to `initial`.
pub fn global_deform(initial: &Contour, center: Point2, params: &ModelParams, grid: &FeatureGrid) -> Result<Contour> {
    check_grid(&params.config, grid)?;
    if initial.len() != params.config.n_vertices {
        return Err(ModelError::ShapeMismatch(format!("{} vertices, model has {}", initial.len(), params.config.n_vertices)));
    }
    let (cf, _) = grid.sample(center);
    Ok(Contour(global_forward(initial.points(), &cf, params, grid).0))
}

/// One refinement module applied to `contour`.
pub fn refine(contour: &Contour, module: &RefineParams, cfg: &ModelConfig, grid: &FeatureGrid) -> Result<Contour> {
    check_grid(cfg, grid)?;
    Ok(Contour(refine_forward(contour.points(), module, cfg, grid)?.0))
}

pub fn forward(center: Point2, params: &ModelParams, grid: &FeatureGrid) -> Result<ModelOutputs> {
    let cfg = &params.config;
    check_grid(cfg, grid)?;
    let (feat, sample) = grid.sample(center);
    let (initial, init) = init_forward(center, &feat, params);
    let (coarse, global) = global_forward(&initial, &feat, params, grid);
    let (iter1, iter2, refine) = if cfg.refine {
        let (a, ca) = refine_forward(&coarse, &params.refine[0], cfg, grid)?;
        let (b, cb) = refine_forward(&a, &params.refine[1], cfg, grid)?;
        (a, b, Some([ca, cb]))
    } else {
        (coarse.clone(), coarse.clone(), None)
    };
    Ok(ModelOutputs {
        initial: Contour(initial),
        coarse: Contour(coarse),
        iter1: Contour(iter1),
        iter2: Contour(iter2),
        center: CenterCache { feat, sample },
        init,
        global,
        refine,
        fingerprint: fingerprint(params, grid),
    })
}

/// Reverse pass. `stage_grads` holds d(loss)/d(vertex) for the initial,
/// coarse, iter1 and iter2 contours.
pub fn backward(
    params: &ModelParams,
    grid: &FeatureGrid,
    outputs: &ModelOutputs,
    stage_grads: [&[Point2]; 4],
) -> Result<ModelGrads> {
    if outputs.fingerprint != fingerprint(params, grid) {
        return Err(ModelError::StaleCache);
    }
    let cfg = &params.config;
    let n = cfg.n_vertices;
    if let Some(bad) = stage_grads.iter().find(|g| g.len() != n) {
        return Err(ModelError::ShapeMismatch(format!("stage gradient has {} vertices, expected {n}", bad.len())));
    }
    let [g_init, g_coarse, g_iter1, g_iter2] = stage_grads;
    let mut grads = params.zeros_like();
    let mut grid_grad = vec![0.0; grid.values.len()];

    let mut d_coarse: Vec<Point2> = g_coarse.to_vec();
    match &outputs.refine {
        Some([c1, c2]) => {
            let [r1, r2] = &params.refine;
            let [gr1, gr2] = &mut grads.refine;
            let d_it1_extra = refine_backward(c2, r2, cfg, grid, g_iter2, gr2, &mut grid_grad);
            let d_iter1: Vec<Point2> = g_iter1.iter().zip(&d_it1_extra).map(|(&a, &b)| a + b).collect();
            let d_from_refine = refine_backward(c1, r1, cfg, grid, &d_iter1, gr1, &mut grid_grad);
            for (d, e) in d_coarse.iter_mut().zip(d_from_refine) {
                *d = *d + e;
            }
        }
        None => {
            for i in 0..n {
                d_coarse[i] = d_coarse[i] + g_iter1[i] + g_iter2[i];
            }
        }
    }

    let mut d_center_feat = vec![0.0; grid.channels];
    let mut d_initial: Vec<Point2> = g_init.iter().zip(&d_coarse).map(|(&a, &b)| a + b).collect();
    if let Some(gc) = &outputs.global {
        let d_out = flatten_scaled(&d_coarse, cfg.global_offset_scale);
        let d_act = params.global_out.backward(&gc.act, &d_out, &mut grads.global_out);
        let d_pre = relu_backward(&gc.pre, &d_act);
        let dz = params.global_hidden.backward(&gc.z, &d_pre, &mut grads.global_hidden);
        let c = grid.channels;
        for i in 0..n {
            d_initial[i] = d_initial[i] + grid.sample_backward(&gc.samples[i], &dz[i * c..(i + 1) * c], &mut grid_grad);
        }
        for (a, b) in d_center_feat.iter_mut().zip(&dz[n * c..]) {
            *a += b;
        }
    }
    if let Some(ic) = &outputs.init {
        let d_out = flatten_scaled(&d_initial, cfg.init_offset_scale);
        let d_act = params.init_out.backward(&ic.act, &d_out, &mut grads.init_out);
        let d_pre = relu_backward(&ic.pre, &d_act);
        let d_cf = params.init_hidden.backward(&outputs.center.feat, &d_pre, &mut grads.init_hidden);
        for (a, b) in d_center_feat.iter_mut().zip(&d_cf) {
            *a += b;
        }
    }
    // the center is an input, so its own coordinate gradient is dropped
    grid.sample_backward(&outputs.center.sample, &d_center_feat, &mut grid_grad);
    Ok(ModelGrads { params: grads, grid: grid_grad })
}
