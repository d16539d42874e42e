use std::f64::consts::TAU;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::geometry::{is_self_intersecting, BBox, Point2, Polygon};
use crate::labeling::{build_label, MdaConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    /// Smooth random radial function.
    Blob,
    /// Alternating spike and notch radii.
    Star,
    Rect,
    Ellipse,
}

impl std::str::FromStr for ShapeFamily {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "blob" => Ok(Self::Blob),
            "star" => Ok(Self::Star),
            "rect" => Ok(Self::Rect),
            "ellipse" => Ok(Self::Ellipse),
            _ => Err(format!("unknown shape family '{s}' (expected blob, star, rect or ellipse)")),
        }
    }
}

impl std::fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Blob => "blob",
            Self::Star => "star",
            Self::Rect => "rect",
            Self::Ellipse => "ellipse",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_instances: usize,
    pub shape_family: ShapeFamily,
    /// `[H, W]` in pixels.
    pub image_size: [usize; 2],
    /// Raw vertices for blob and ellipse outlines.
    pub vertex_budget: usize,
    /// Mean radius as a fraction of the smaller image side.
    pub radius_range: [f64; 2],
    pub seed: u64,
    /// Give up after this many rejected candidates.
    pub max_rejections: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_instances: 200,
            shape_family: ShapeFamily::Blob,
            image_size: [128, 128],
            vertex_budget: 48,
            radius_range: [0.2, 0.3],
            seed: 0,
            max_rejections: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticInstance {
    pub id: usize,
    pub polygon: Polygon,
    pub shape_family: ShapeFamily,
}

/// Outline around the origin, before placement.
fn raw_outline(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Point2> {
    let side = cfg.image_size[0].min(cfg.image_size[1]) as f64;
    let r = side * rng.gen_range(cfg.radius_range[0]..=cfg.radius_range[1]);
    let rot = rng.gen_range(0.0..TAU);
    match cfg.shape_family {
        ShapeFamily::Blob => {
            let n = cfg.vertex_budget.max(8);
            let harmonics: Vec<(f64, f64, f64)> =
                (2..=4).map(|k| (k as f64, rng.gen_range(-0.12..0.12), rng.gen_range(0.0..TAU))).collect();
            (0..n)
                .map(|i| {
                    let t = TAU * i as f64 / n as f64;
                    let rr = r * (1.0 + harmonics.iter().map(|(k, a, ph)| a * (k * t + ph).cos()).sum::<f64>());
                    Point2::from_polar(rr, t + rot)
                })
                .collect()
        }
        ShapeFamily::Star => {
            let spikes = rng.gen_range(5..=8);
            let inner = rng.gen_range(0.4..0.6);
            (0..2 * spikes)
                .map(|i| {
                    let t = TAU * i as f64 / (2 * spikes) as f64 + rng.gen_range(-0.05..0.05);
                    let rr = if i % 2 == 0 { r * rng.gen_range(0.9..1.1) } else { r * inner };
                    Point2::from_polar(rr, t + rot)
                })
                .collect()
        }
        ShapeFamily::Rect => {
            let aspect = rng.gen_range(0.5..1.0);
            let (hw, hh) = (r, r * aspect);
            [[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]].map(|p| Point2::from(p).rotate(rot)).to_vec()
        }
        ShapeFamily::Ellipse => {
            let n = cfg.vertex_budget.max(8);
            let b = r * rng.gen_range(0.5..1.0);
            (0..n)
                .map(|i| {
                    let t = TAU * i as f64 / n as f64;
                    Point2::new(r * t.cos(), b * t.sin()).rotate(rot)
                })
                .collect()
        }
    }
}

/// Deterministic for a given config. Candidates that self-intersect, leave
/// the image or cannot be labeled are redrawn.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<SyntheticInstance>> {
    let [h, w] = cfg.image_size;
    if h < 8 || w < 8 {
        return Err(TrainError::InvalidConfig(format!("image size {h}x{w} too small")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_instances);
    let mut rejections = 0;
    let probe = MdaConfig { n_vertices: 8, m_aligned: 4, ..MdaConfig::default() };
    while out.len() < cfg.n_instances {
        let raw = raw_outline(cfg, &mut rng);
        let bb = BBox::of(&raw);
        let margin = 2.0;
        let (lo_x, hi_x) = (margin - bb.min.x, w as f64 - margin - bb.max.x);
        let (lo_y, hi_y) = (margin - bb.min.y, h as f64 - margin - bb.max.y);
        let accepted = if lo_x < hi_x && lo_y < hi_y {
            let shift = Point2::new(rng.gen_range(lo_x..hi_x), rng.gen_range(lo_y..hi_y));
            let v: Vec<Point2> = raw.iter().map(|&p| p + shift).collect();
            if is_self_intersecting(&v) {
                None
            } else {
                Polygon::new(v).ok().filter(|p| build_label(p, &probe).is_ok())
            }
        } else {
            None
        };
        match accepted {
            Some(polygon) => out.push(SyntheticInstance { id: out.len(), polygon, shape_family: cfg.shape_family }),
            None => {
                rejections += 1;
                if rejections > cfg.max_rejections {
                    return Err(TrainError::GenerationExhausted { rejections, generated: out.len() });
                }
            }
        }
    }
    Ok(out)
}
