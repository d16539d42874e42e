//! Fixed image encoder that turns an instance's rasterized mask into a
//! feature grid, standing in for a convolutional backbone.
//!
//! Channels, in order (extra channels repeat the blurred mask at coarser
//! windows, fewer channels truncate the list):
//! 0-1 offset to the nearest mask boundary point / 16 px,
//! 2 signed distance / 16 px (negative inside),
//! 3 occupancy,
//! 4-5 unit normal (gradient of the signed distance),
//! 6 blurred mask,
//! 7 divergence of the normal field (a curvature proxy).

use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::geometry::{rasterize, MaskGrid, Point2, Polygon};
use crate::model::FeatureGrid;

const DIST_SCALE: f64 = 16.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Lattice `[rows, cols]`; must divide the image size evenly.
    pub grid_size: [usize; 2],
    pub channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { grid_size: [32, 32], channels: 8 }
    }
}

/// Midpoints between 4-adjacent pixels that disagree, plus the outer edge
/// of mask pixels touching the image border.
pub fn mask_boundary_points(m: &MaskGrid) -> Vec<Point2> {
    let (h, w) = m.dims();
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = m.get(r, c);
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            if c + 1 < w && m.get(r, c + 1) != v {
                out.push(Point2::new(x + 0.5, y));
            }
            if r + 1 < h && m.get(r + 1, c) != v {
                out.push(Point2::new(x, y + 0.5));
            }
            if v {
                if c == 0 {
                    out.push(Point2::new(0.0, y));
                }
                if c + 1 == w {
                    out.push(Point2::new(w as f64, y));
                }
                if r == 0 {
                    out.push(Point2::new(x, 0.0));
                }
                if r + 1 == h {
                    out.push(Point2::new(x, h as f64));
                }
            }
        }
    }
    out
}

fn window_fraction(prefix: &[usize], w: usize, h: usize, (cx, cy): (f64, f64), half: f64) -> f64 {
    let lo_c = (cx - half).round().clamp(0.0, w as f64) as usize;
    let hi_c = (cx + half).round().clamp(0.0, w as f64) as usize;
    let lo_r = (cy - half).round().clamp(0.0, h as f64) as usize;
    let hi_r = (cy + half).round().clamp(0.0, h as f64) as usize;
    let area = (hi_c - lo_c) * (hi_r - lo_r);
    if area == 0 {
        return 0.0;
    }
    let at = |r: usize, c: usize| prefix[r * (w + 1) + c];
    let s = at(hi_r, hi_c) + at(lo_r, lo_c) - at(lo_r, hi_c) - at(hi_r, lo_c);
    s as f64 / area as f64
}

/// Encodes the instance mask of `polygon` rendered at `image_size`.
pub fn encode_instance(polygon: &Polygon, image_size: [usize; 2], cfg: &EncoderConfig) -> Result<FeatureGrid> {
    let [h, w] = image_size;
    let [gh, gw] = cfg.grid_size;
    if gh < 2 || gw < 2 || h % gh != 0 || w % gw != 0 || h / gh != w / gw {
        return Err(TrainError::InvalidConfig(format!(
            "grid {gh}x{gw} must evenly tile image {h}x{w} with square cells"
        )));
    }
    if cfg.channels == 0 {
        return Err(TrainError::InvalidConfig("encoder needs at least one channel".into()));
    }
    let cell = (h / gh) as f64;
    let mask = rasterize(polygon, h, w);
    let boundary = mask_boundary_points(&mask);
    let mut prefix = vec![0usize; (h + 1) * (w + 1)];
    for r in 0..h {
        for c in 0..w {
            prefix[(r + 1) * (w + 1) + c + 1] =
                prefix[r * (w + 1) + c + 1] + prefix[(r + 1) * (w + 1) + c] - prefix[r * (w + 1) + c] + mask.get(r, c) as usize;
        }
    }
    let mut grid = FeatureGrid::zeros(gh, gw, cfg.channels, cell).map_err(TrainError::Model)?;
    let mut normals = vec![Point2::ZERO; gh * gw];
    let mut base = vec![[0.0f64; 7]; gh * gw];
    for r in 0..gh {
        for c in 0..gw {
            let p = grid.site(r, c);
            let inside = mask.get((p.y as usize).min(h - 1), (p.x as usize).min(w - 1));
            let (off, dist) = boundary
                .iter()
                .map(|&b| (b - p, p.dist_sq(b)))
                .fold((Point2::ZERO, f64::INFINITY), |best, cand| if cand.1 < best.1 { cand } else { best });
            let (off, dist) = if dist.is_finite() { (off, dist.sqrt()) } else { (Point2::ZERO, 0.0) };
            let sdf = if inside { -dist } else { dist };
            let n = if dist > 0.0 {
                let u = off * (1.0 / dist);
                if inside {
                    u
                } else {
                    u * -1.0
                }
            } else {
                Point2::ZERO
            };
            normals[r * gw + c] = n;
            let blur = window_fraction(&prefix, w, h, (p.x, p.y), cell);
            base[r * gw + c] =
                [off.x / DIST_SCALE, off.y / DIST_SCALE, sdf / DIST_SCALE, inside as u8 as f64, n.x, n.y, blur];
        }
    }
    for r in 0..gh {
        for c in 0..gw {
            // central differences, one-sided at the lattice edge
            let (c0, c1) = (c.saturating_sub(1), (c + 1).min(gw - 1));
            let (r0, r1) = (r.saturating_sub(1), (r + 1).min(gh - 1));
            let dnx = (normals[r * gw + c1].x - normals[r * gw + c0].x) / (c1 - c0) as f64;
            let dny = (normals[r1 * gw + c].y - normals[r0 * gw + c].y) / (r1 - r0) as f64;
            let curvature = dnx + dny;
            let p = grid.site(r, c);
            let v = grid.at_mut(r, c);
            for (k, slot) in v.iter_mut().enumerate() {
                *slot = match k {
                    0..=6 => base[r * gw + c][k],
                    7 => curvature,
                    _ => window_fraction(&prefix, w, h, (p.x, p.y), cell * (1u64 << (k - 7).min(16)) as f64),
                };
            }
        }
    }
    Ok(grid)
}
