//! The `e2ec` command line.
//!
//! Exit codes: 0 ok, 1 usage or config error, 2 runtime failure, 3 a check
//! failed. `E2EC_SEED` supplies `--seed` when the flag is absent.

mod svg;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geometry::{Contour, Point2};
use crate::gradcheck::{run_grad_check, GradCheckConfig};
use crate::labeling::{build_label, MdaConfig};
use crate::losses::LastStageLoss;
use crate::model::{forward, load_checkpoint, save_checkpoint, ModelParams};
use crate::training::{
    evaluate, generate_dataset, measure_throughput, prepare_samples, train, write_history_csv, EvalOptions,
    OptimizerKind, ShapeFamily, SynthConfig, SyntheticInstance, TrainConfig, TrainError, TrainSample,
};

pub use svg::escape_xml;

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Runtime(_) => 2,
            Self::CheckFailed(_) => 3,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) | TrainError::Label(crate::labeling::LabelError::InvalidConfig(_)) => usage(e),
            _ => runtime(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// On-disk dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub version: u32,
    /// `[H, W]`
    pub image_size: [usize; 2],
    pub instances: Vec<SyntheticInstance>,
    #[serde(default)]
    pub config: Value,
}

impl DatasetFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        let d: DatasetFile = serde_json::from_str(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        let [h, w] = d.image_size;
        for inst in &d.instances {
            let inside = inst.polygon.vertices().iter().all(|p| (0.0..=w as f64).contains(&p.x) && (0.0..=h as f64).contains(&p.y));
            if !inside {
                return Err(runtime(format!("instance {} leaves the {h}x{w} image", inst.id)));
            }
        }
        Ok(d)
    }
}

#[derive(Parser, Debug)]
#[command(name = "e2ec", version, about = "Contour-based instance segmentation on synthetic shapes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Dump aligned labels (and optionally an SVG of the alignment).
    SampleLabels(SampleLabelsArgs),
    /// Train and write a checkpoint plus metric history.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or fresh parameters) on a dataset.
    Eval(EvalArgs),
    /// Finite-difference check of every gradient.
    GradCheck(GradCheckArgs),
    /// Per-stage throughput.
    Bench(BenchArgs),
    /// Draw ground truth, stage contours and deformation paths as SVG.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// JSON file with synthesis settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    family: Option<ShapeFamily>,
    /// `H,W`
    #[arg(long, value_delimiter = ',', num_args = 2)]
    image_size: Option<Vec<usize>>,
    #[arg(long)]
    vertex_budget: Option<usize>,
    #[arg(long, env = "E2EC_SEED")]
    seed: Option<u64>,
    #[arg(long, default_value = "dataset.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SampleLabelsArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON file with alignment settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Vertices per contour.
    #[arg(long)]
    n: Option<usize>,
    /// Aligned directions.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    start_angle: Option<f64>,
    #[arg(long)]
    subsegments: Option<usize>,
    #[arg(long, default_value = "labels.json")]
    out: PathBuf,
    /// Also draw one instance under M = 1, 2, 4, 8.
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    svg_instance: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// N = 32, C = 8, Adam.
    Toy,
    /// N = 128, C = 64, plain gradient descent at 1e-4.
    Full,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OptimizerFlag {
    Sgd,
    Momentum,
    Adam,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossFlag {
    SmoothL1,
    Chamfer,
    Dml,
}

/// Training/model settings shared by train, eval, bench and render.
#[derive(Args, Debug, Default)]
struct ConfigFlags {
    /// Starting point before the config file and flags are applied.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// JSON file with training settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerFlag>,
    /// Contour vertices N (model and labels).
    #[arg(long)]
    n: Option<usize>,
    /// Aligned directions M.
    #[arg(long)]
    m: Option<usize>,
    /// Feature channels C.
    #[arg(long)]
    c: Option<usize>,
    /// Feature grid side.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, value_enum)]
    last_stage_loss: Option<LossFlag>,
    #[arg(long)]
    grid_lr_scale: Option<f64>,
    #[arg(long, env = "E2EC_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Held-out dataset evaluated into the history.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigFlags,
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    #[arg(long, default_value = "history.csv")]
    history: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Without a checkpoint the freshly initialized model is evaluated.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigFlags,
    /// Also time each stage.
    #[arg(long)]
    throughput: bool,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    c: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    loss_instances: Option<usize>,
    #[arg(long)]
    model_instances: Option<usize>,
    #[arg(long, env = "E2EC_SEED")]
    seed: Option<u64>,
    /// Write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Without a dataset, blobs are generated with the run seed.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigFlags,
    #[arg(long, default_value_t = 100)]
    n_instances: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value = "bench.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigFlags,
    #[arg(long, default_value_t = 0)]
    instance: usize,
    /// Comma-separated subset of initial, coarse, iter1, final.
    #[arg(long, value_delimiter = ',', default_value = "initial,coarse,iter1,final")]
    stages: Vec<String>,
    /// Draw vertex paths between consecutive selected stages.
    #[arg(long)]
    paths: bool,
    /// Comma-separated colors, one per selected stage.
    #[arg(long, value_delimiter = ',')]
    colors: Option<Vec<String>>,
    /// Output pixels per image pixel.
    #[arg(long, default_value_t = 4.0)]
    scale: f64,
    #[arg(long, default_value = "render.svg")]
    out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::SampleLabels(a) => cmd_sample_labels(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::GradCheck(a) => cmd_grad_check(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Render(a) => cmd_render(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn read_json(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, v: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).map_err(runtime)?;
    std::fs::write(path, text + "\n").map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Recursive object merge; non-object values in `patch` replace.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn set_path(v: &mut Value, path: &[&str], val: Value) {
    let mut cur = v;
    for key in path {
        if !cur.is_object() {
            *cur = json!({});
        }
        cur = cur.as_object_mut().unwrap().entry(key.to_string()).or_insert(Value::Null);
    }
    *cur = val;
}

fn layered<T: Serialize + for<'de> Deserialize<'de>>(
    base: &T,
    layers: impl IntoIterator<Item = Value>,
    sets: &[(&[&str], Value)],
) -> CliResult<T> {
    let mut v = serde_json::to_value(base).map_err(runtime)?;
    for l in layers {
        merge(&mut v, l);
    }
    for (path, val) in sets {
        set_path(&mut v, path, val.clone());
    }
    serde_json::from_value(v).map_err(|e| usage(format!("config: {e}")))
}

impl ConfigFlags {
    fn overrides(&self) -> Vec<(&'static [&'static str], Value)> {
        let mut s: Vec<(&'static [&'static str], Value)> = Vec::new();
        if let Some(v) = self.epochs {
            s.push((&["epochs"], json!(v)));
        }
        if let Some(v) = self.lr {
            s.push((&["learning_rate"], json!(v)));
        }
        if let Some(v) = self.batch_size {
            s.push((&["batch_size"], json!(v)));
        }
        if let Some(o) = self.optimizer {
            let kind = match o {
                OptimizerFlag::Sgd => OptimizerKind::Sgd,
                OptimizerFlag::Momentum => OptimizerKind::Momentum { beta: 0.9 },
                OptimizerFlag::Adam => OptimizerKind::adam(),
            };
            s.push((&["optimizer"], serde_json::to_value(kind).unwrap()));
        }
        if let Some(v) = self.n {
            s.push((&["mda", "n_vertices"], json!(v)));
            s.push((&["model", "n_vertices"], json!(v)));
        }
        if let Some(v) = self.m {
            s.push((&["mda", "m_aligned"], json!(v)));
        }
        if let Some(v) = self.c {
            s.push((&["model", "channels"], json!(v)));
            s.push((&["encoder", "channels"], json!(v)));
        }
        if let Some(v) = self.grid {
            s.push((&["encoder", "grid_size"], json!([v, v])));
        }
        if let Some(l) = self.last_stage_loss {
            let l = match l {
                LossFlag::SmoothL1 => LastStageLoss::SmoothL1,
                LossFlag::Chamfer => LastStageLoss::Chamfer,
                LossFlag::Dml => LastStageLoss::Dml,
            };
            s.push((&["loss", "last_stage"], serde_json::to_value(l).unwrap()));
        }
        if let Some(v) = self.grid_lr_scale {
            s.push((&["grid_lr_scale"], json!(v)));
        }
        if let Some(v) = self.seed {
            s.push((&["seed"], json!(v)));
            s.push((&["model", "seed"], json!(v)));
        }
        s
    }

    /// preset → checkpoint config → config file → flags; the image size
    /// always comes from the data.
    fn resolve(&self, from_checkpoint: Option<&TrainConfig>, image_size: [usize; 2]) -> CliResult<TrainConfig> {
        let base = match (self.preset, from_checkpoint) {
            (Some(Preset::Full), _) => TrainConfig::default(),
            (Some(Preset::Toy), _) | (None, None) => TrainConfig::toy(),
            (None, Some(c)) => c.clone(),
        };
        let file = self.config.as_deref().map(read_json).transpose()?;
        let mut sets = self.overrides();
        sets.push((&["image_size"], json!(image_size)));
        let cfg: TrainConfig = layered(&base, file, &sets)?;
        Ok(cfg.resolved()?)
    }
}

fn load_params(checkpoint: Option<&Path>) -> CliResult<Option<(ModelParams, TrainConfig)>> {
    let Some(path) = checkpoint else { return Ok(None) };
    let (params, meta) = load_checkpoint(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let cfg: TrainConfig = serde_json::from_value(meta.get("train_config").cloned().unwrap_or(Value::Null))
        .map_err(|e| runtime(format!("{}: missing or invalid train_config: {e}", path.display())))?;
    Ok(Some((params, cfg)))
}

/// Parameters from the checkpoint (validated against `cfg`) or freshly initialized.
fn params_for(ckpt: Option<ModelParams>, cfg: &TrainConfig) -> CliResult<ModelParams> {
    match ckpt {
        Some(p) => {
            if p.config != cfg.model {
                return Err(usage("flags change the model architecture stored in the checkpoint"));
            }
            Ok(p)
        }
        None => ModelParams::new(cfg.model.clone()).map_err(usage),
    }
}

fn samples_for(data: &DatasetFile, cfg: &TrainConfig) -> CliResult<Vec<TrainSample>> {
    Ok(prepare_samples(&data.instances, &cfg.mda, cfg.image_size, &cfg.encoder)?)
}

fn cmd_gen_data(a: GenDataArgs) -> CliResult<()> {
    let file = a.config.as_deref().map(read_json).transpose()?;
    let mut sets: Vec<(&[&str], Value)> = Vec::new();
    if let Some(n) = a.n {
        sets.push((&["n_instances"], json!(n)));
    }
    if let Some(f) = a.family {
        sets.push((&["shape_family"], serde_json::to_value(f).unwrap()));
    }
    if let Some(s) = &a.image_size {
        sets.push((&["image_size"], json!(s)));
    }
    if let Some(v) = a.vertex_budget {
        sets.push((&["vertex_budget"], json!(v)));
    }
    if let Some(s) = a.seed {
        sets.push((&["seed"], json!(s)));
    }
    let cfg: SynthConfig = layered(&SynthConfig::default(), file, &sets)?;
    let instances = generate_dataset(&cfg)?;
    let n = instances.len();
    let file = DatasetFile {
        version: DATASET_VERSION,
        image_size: cfg.image_size,
        instances,
        config: serde_json::to_value(&cfg).unwrap(),
    };
    write_json(&a.out, &file)?;
    println!("wrote {n} instances to {}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct LabelDump {
    id: usize,
    center: Point2,
    gt_contour: Contour,
    gt_keys: Vec<Point2>,
    fixed_indices: Vec<usize>,
}

fn cmd_sample_labels(a: SampleLabelsArgs) -> CliResult<()> {
    let data = DatasetFile::load(&a.data)?;
    let file = a.config.as_deref().map(read_json).transpose()?;
    let mut sets: Vec<(&[&str], Value)> = Vec::new();
    if let Some(n) = a.n {
        sets.push((&["n_vertices"], json!(n)));
    }
    if let Some(m) = a.m {
        sets.push((&["m_aligned"], json!(m)));
    }
    if let Some(s) = a.start_angle {
        sets.push((&["start_angle"], json!(s)));
    }
    if let Some(k) = a.subsegments {
        sets.push((&["subsegments"], json!(k)));
    }
    let cfg: MdaConfig = layered(&MdaConfig::default(), file, &sets)?;
    cfg.validate().map_err(usage)?;
    let mut dumps = Vec::with_capacity(data.instances.len());
    for inst in &data.instances {
        let l = build_label(&inst.polygon, &cfg).map_err(|e| runtime(format!("instance {}: {e}", inst.id)))?;
        dumps.push(LabelDump {
            id: inst.id,
            center: l.center,
            gt_contour: l.gt_contour,
            gt_keys: l.gt_keys,
            fixed_indices: cfg.fixed_indices(),
        });
    }
    let out = json!({
        "version": DATASET_VERSION,
        "dataset": a.data.display().to_string(),
        "config": cfg,
        "instances": dumps,
    });
    write_json(&a.out, &out)?;
    println!("wrote labels for {} instances to {}", dumps.len(), a.out.display());
    if let Some(path) = &a.svg {
        let inst = data
            .instances
            .get(a.svg_instance)
            .ok_or_else(|| usage(format!("--svg-instance {} out of range", a.svg_instance)))?;
        let [h, w] = data.image_size;
        let ms: Vec<usize> = [1, 2, 4, 8].into_iter().filter(|m| cfg.n_vertices.is_multiple_of(*m)).collect();
        let meta = json!({"config": cfg, "dataset": a.data.display().to_string(), "instance": inst.id, "m_values": ms});
        let mut fig = svg::Figure::new((w * ms.len().max(1)) as f64, h as f64, 3.0, &meta);
        for (k, &m) in ms.iter().enumerate() {
            let c = MdaConfig { m_aligned: m, ..cfg.clone() };
            let l = build_label(&inst.polygon, &c).map_err(runtime)?;
            let fixed: Vec<Point2> = c.fixed_indices().iter().map(|&i| l.gt_contour[i]).collect();
            fig.begin_panel(&format!("m{m}"), (k * w) as f64, 0.0, &format!("M = {m}"));
            fig.ground_truth(l.raw_polygon.vertices());
            fig.rays(l.center, &fixed, "#999999");
            fig.dots("contour", l.gt_contour.points(), "#1f77b4", 0.8);
            fig.dots("fixed", &fixed, "#d62728", 1.2);
            fig.end_panel();
        }
        std::fs::write(path, fig.finish()).map_err(runtime)?;
        println!("wrote alignment figure to {}", path.display());
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let data = DatasetFile::load(&a.data)?;
    let cfg = a.cfg.resolve(None, data.image_size)?;
    let samples = samples_for(&data, &cfg)?;
    let eval = match &a.eval_data {
        Some(p) => {
            let d = DatasetFile::load(p)?;
            if d.image_size != data.image_size {
                return Err(usage("evaluation data has a different image size"));
            }
            Some(samples_for(&d, &cfg)?)
        }
        None => None,
    };
    let outcome = train(&samples, eval.as_deref(), &cfg)?;
    let cfg_json = serde_json::to_value(&outcome.config).unwrap();
    let meta = json!({
        "train_config": cfg_json,
        "dataset": a.data.display().to_string(),
        "epochs_run": outcome.history.len(),
    });
    save_checkpoint(&a.out, &outcome.params, &meta).map_err(runtime)?;
    let f = std::fs::File::create(&a.history).map_err(|e| runtime(format!("{}: {e}", a.history.display())))?;
    write_history_csv(std::io::BufWriter::new(f), &meta, &outcome.history)?;
    if let Some(last) = outcome.history.last() {
        let iou = last.eval_iou_final.map(|v| format!(" final-stage IoU {v:.4}")).unwrap_or_default();
        println!("epoch {} l_overall {:.4}{iou}", last.epoch, last.l_overall);
    }
    println!("wrote checkpoint to {} and history to {}", a.out.display(), a.history.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let data = DatasetFile::load(&a.data)?;
    let ckpt = load_params(a.checkpoint.as_deref())?;
    let cfg = a.cfg.resolve(ckpt.as_ref().map(|c| &c.1), data.image_size)?;
    let params = params_for(ckpt.map(|c| c.0), &cfg)?;
    let samples = samples_for(&data, &cfg)?;
    let opts = EvalOptions { image_size: cfg.image_size, measure_throughput: a.throughput, ..EvalOptions::default() };
    let report = evaluate(&params, &samples, &opts)?;
    for (name, m) in report.stages() {
        println!(
            "{name:8} mask IoU {:.4}  boundary IoU d1 {:.4} d2 {:.4}  vertex L1 {:.3} px",
            m.mask_iou, m.boundary_iou_d1, m.boundary_iou_d2, m.vertex_l1
        );
    }
    let out = json!({
        "version": DATASET_VERSION,
        "dataset": a.data.display().to_string(),
        "checkpoint": a.checkpoint.as_ref().map(|p| p.display().to_string()),
        "config": cfg,
        "report": report,
    });
    write_json(&a.out, &out)?;
    println!("wrote report to {}", a.out.display());
    Ok(())
}

fn cmd_grad_check(a: GradCheckArgs) -> CliResult<()> {
    let file = a.config.as_deref().map(read_json).transpose()?;
    let mut sets: Vec<(&[&str], Value)> = Vec::new();
    if let Some(v) = a.n {
        sets.push((&["n_vertices"], json!(v)));
    }
    if let Some(v) = a.c {
        sets.push((&["channels"], json!(v)));
    }
    if let Some(v) = a.grid {
        sets.push((&["grid_size"], json!(v)));
    }
    if let Some(v) = a.loss_instances {
        sets.push((&["loss_instances"], json!(v)));
    }
    if let Some(v) = a.model_instances {
        sets.push((&["model_instances"], json!(v)));
    }
    if let Some(v) = a.seed {
        sets.push((&["seed"], json!(v)));
    }
    let cfg: GradCheckConfig = layered(&GradCheckConfig::default(), file, &sets)?;
    if cfg.n_vertices < 9 || cfg.grid_size < 2 || cfg.channels == 0 || cfg.loss_instances == 0 {
        return Err(usage("grad-check needs n >= 9, grid >= 2, c >= 1 and at least one instance"));
    }
    let report = run_grad_check(&cfg).map_err(runtime)?;
    for c in &report.checks {
        println!(
            "{:28} checked {:6} rejected {:4} max rel err {:.2e}  {}",
            c.name,
            c.checked,
            c.rejected,
            c.max_rel_err,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    if report.passed {
        println!("all checks passed");
        Ok(())
    } else {
        Err(CliError::CheckFailed("gradient check failed".into()))
    }
}

fn cmd_bench(a: BenchArgs) -> CliResult<()> {
    let ckpt = load_params(a.checkpoint.as_deref())?;
    let data = match &a.data {
        Some(p) => DatasetFile::load(p)?,
        None => {
            let synth = SynthConfig { n_instances: a.n_instances, seed: a.cfg.seed.unwrap_or(0), ..SynthConfig::default() };
            DatasetFile {
                version: DATASET_VERSION,
                image_size: synth.image_size,
                instances: generate_dataset(&synth)?,
                config: serde_json::to_value(&synth).unwrap(),
            }
        }
    };
    let cfg = a.cfg.resolve(ckpt.as_ref().map(|c| &c.1), data.image_size)?;
    let params = params_for(ckpt.map(|c| c.0), &cfg)?;
    let samples = samples_for(&data, &cfg)?;
    if samples.is_empty() {
        return Err(usage("bench needs at least one instance"));
    }
    let t = measure_throughput(&params, &samples, a.repeats)?;
    println!("{:8} {:>14}", "stage", "instances/s");
    for (name, v) in [("initial", t.initial), ("coarse", t.coarse), ("final", t.final_stage)] {
        println!("{name:8} {v:>14.1}");
    }
    let out = json!({
        "version": DATASET_VERSION,
        "config": cfg,
        "dataset": data.config,
        "checkpoint": a.checkpoint.as_ref().map(|p| p.display().to_string()),
        "n_instances": samples.len(),
        "repeats": a.repeats,
        "throughput": t,
    });
    write_json(&a.out, &out)?;
    println!("wrote throughput table to {}", a.out.display());
    Ok(())
}

const STAGE_NAMES: [&str; 4] = ["initial", "coarse", "iter1", "final"];
const STAGE_COLORS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

fn cmd_render(a: RenderArgs) -> CliResult<()> {
    let mut stages = Vec::new();
    for s in &a.stages {
        let s = if s == "iter2" { "final" } else { s.as_str() };
        let idx = STAGE_NAMES.iter().position(|n| *n == s).ok_or_else(|| usage(format!("unknown stage '{s}'")))?;
        stages.push(idx);
    }
    if stages.is_empty() {
        return Err(usage("select at least one stage"));
    }
    if let Some(c) = &a.colors {
        if c.len() != stages.len() {
            return Err(usage(format!("{} colors for {} stages", c.len(), stages.len())));
        }
    }
    let data = DatasetFile::load(&a.data)?;
    let ckpt = load_params(a.checkpoint.as_deref())?;
    let cfg = a.cfg.resolve(ckpt.as_ref().map(|c| &c.1), data.image_size)?;
    let params = params_for(ckpt.map(|c| c.0), &cfg)?;
    let inst = data.instances.get(a.instance).ok_or_else(|| usage(format!("--instance {} out of range", a.instance)))?;
    let sample = prepare_samples(std::slice::from_ref(inst), &cfg.mda, cfg.image_size, &cfg.encoder)?.remove(0);
    let out = forward(sample.label.center, &params, &sample.grid).map_err(runtime)?;
    let contours = out.stages();
    let [h, w] = data.image_size;
    let colors: Vec<String> = match &a.colors {
        Some(c) => c.clone(),
        None => stages.iter().map(|&i| STAGE_COLORS[i].to_string()).collect(),
    };
    let meta = json!({
        "config": cfg,
        "dataset": a.data.display().to_string(),
        "checkpoint": a.checkpoint.as_ref().map(|p| p.display().to_string()),
        "instance": inst.id,
        "stages": stages.iter().map(|&i| STAGE_NAMES[i]).collect::<Vec<_>>(),
        "paths": a.paths,
        "colors": colors,
    });
    let mut fig = svg::Figure::new(w as f64, h as f64, a.scale, &meta);
    fig.ground_truth(sample.label.raw_polygon.vertices());
    let drawn: Vec<svg::Stage> = stages
        .iter()
        .zip(&colors)
        .map(|(&i, c)| svg::Stage { name: STAGE_NAMES[i], color: c, points: contours[i].points() })
        .collect();
    for s in &drawn {
        fig.stage(s);
    }
    if a.paths {
        for pair in drawn.windows(2) {
            fig.paths(&pair[0], &pair[1]);
        }
    }
    let mut f = std::fs::File::create(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    f.write_all(fig.finish().as_bytes()).map_err(runtime)?;
    println!("wrote {}", a.out.display());
    Ok(())
}
