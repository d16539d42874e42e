use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::geometry::Point2;

/// Dense `H x W x C` feature lattice. Site `(r, c)` sits at pixel
/// `((c + 0.5) * cell_size, (r + 0.5) * cell_size)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Pixels per lattice step.
    pub cell_size: f64,
    /// Row-major, channel-last.
    pub values: Vec<f64>,
}

impl FeatureGrid {
    pub fn zeros(height: usize, width: usize, channels: usize, cell_size: f64) -> Result<Self> {
        Self::from_values(height, width, channels, cell_size, vec![0.0; height * width * channels])
    }

    pub fn from_values(height: usize, width: usize, channels: usize, cell_size: f64, values: Vec<f64>) -> Result<Self> {
        if height < 2 || width < 2 || channels == 0 {
            return Err(ModelError::InvalidConfig(format!("grid {height}x{width}x{channels} too small")));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(ModelError::InvalidConfig(format!("cell size {cell_size}")));
        }
        if values.len() != height * width * channels {
            return Err(ModelError::ShapeMismatch(format!(
                "grid values {} != {height}*{width}*{channels}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidConfig("grid contains non-finite values".into()));
        }
        Ok(Self { height, width, channels, cell_size, values })
    }

    pub fn at(&self, r: usize, c: usize) -> &[f64] {
        let o = (r * self.width + c) * self.channels;
        &self.values[o..o + self.channels]
    }

    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut [f64] {
        let o = (r * self.width + c) * self.channels;
        &mut self.values[o..o + self.channels]
    }

    /// Pixel coordinates of lattice site `(r, c)`.
    pub fn site(&self, r: usize, c: usize) -> Point2 {
        Point2::new((c as f64 + 0.5) * self.cell_size, (r as f64 + 0.5) * self.cell_size)
    }

    /// Bilinear sample at pixel position `p`, clamped to the lattice.
    pub fn sample(&self, p: Point2) -> (Vec<f64>, SampleCache) {
        let cache = self.locate(p);
        let mut out = vec![0.0; self.channels];
        self.interp_into(&cache, &mut out);
        (out, cache)
    }

    fn locate(&self, p: Point2) -> SampleCache {
        let axis = |x: f64, n: usize| {
            let u = x / self.cell_size - 0.5;
            let hi = (n - 1) as f64;
            let clamped = !(0.0..=hi).contains(&u);
            let u = u.clamp(0.0, hi);
            let i0 = (u.floor() as usize).min(n - 2);
            (i0, u - i0 as f64, clamped)
        };
        let (c0, fu, clamp_u) = axis(p.x, self.width);
        let (r0, fv, clamp_v) = axis(p.y, self.height);
        SampleCache { r0, c0, fu, fv, clamp_u, clamp_v }
    }

    fn interp_into(&self, s: &SampleCache, out: &mut [f64]) {
        let (g00, g01) = (self.at(s.r0, s.c0), self.at(s.r0, s.c0 + 1));
        let (g10, g11) = (self.at(s.r0 + 1, s.c0), self.at(s.r0 + 1, s.c0 + 1));
        let (w00, w01, w10, w11) = s.weights();
        for k in 0..self.channels {
            out[k] = w00 * g00[k] + w01 * g01[k] + w10 * g10[k] + w11 * g11[k];
        }
    }

    /// Back-propagate `dfeat` through one sample: accumulates into
    /// `grid_grad` (same layout as `values`) and returns d/d(point).
    pub fn sample_backward(&self, s: &SampleCache, dfeat: &[f64], grid_grad: &mut [f64]) -> Point2 {
        let (w00, w01, w10, w11) = s.weights();
        let ch = self.channels;
        let idx = |r: usize, c: usize| (r * self.width + c) * ch;
        let (i00, i01, i10, i11) = (idx(s.r0, s.c0), idx(s.r0, s.c0 + 1), idx(s.r0 + 1, s.c0), idx(s.r0 + 1, s.c0 + 1));
        let (mut du, mut dv) = (0.0, 0.0);
        let g = &self.values;
        for k in 0..ch {
            let d = dfeat[k];
            grid_grad[i00 + k] += w00 * d;
            grid_grad[i01 + k] += w01 * d;
            grid_grad[i10 + k] += w10 * d;
            grid_grad[i11 + k] += w11 * d;
            du += d * ((1.0 - s.fv) * (g[i01 + k] - g[i00 + k]) + s.fv * (g[i11 + k] - g[i10 + k]));
            dv += d * ((1.0 - s.fu) * (g[i10 + k] - g[i00 + k]) + s.fu * (g[i11 + k] - g[i01 + k]));
        }
        let inv = 1.0 / self.cell_size;
        Point2::new(if s.clamp_u { 0.0 } else { du * inv }, if s.clamp_v { 0.0 } else { dv * inv })
    }
}

/// Which lattice cell a sample fell in, its fractional position, and whether
/// each axis was clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleCache {
    pub r0: usize,
    pub c0: usize,
    pub fu: f64,
    pub fv: f64,
    pub clamp_u: bool,
    pub clamp_v: bool,
}

impl SampleCache {
    fn weights(&self) -> (f64, f64, f64, f64) {
        let (fu, fv) = (self.fu, self.fv);
        ((1.0 - fu) * (1.0 - fv), fu * (1.0 - fv), (1.0 - fu) * fv, fu * fv)
    }

    /// Discrete state of the sample; gradients are smooth while it is unchanged.
    pub fn branch(&self) -> [i64; 4] {
        [self.r0 as i64, self.c0 as i64, self.clamp_u as i64, self.clamp_v as i64]
    }
}

/// Sample every point; returns an `n x C` row-major matrix and the caches.
pub fn sample_features(grid: &FeatureGrid, pts: &[Point2]) -> (Vec<f64>, Vec<SampleCache>) {
    let ch = grid.channels;
    let mut out = vec![0.0; pts.len() * ch];
    let caches = pts
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let s = grid.locate(p);
            grid.interp_into(&s, &mut out[i * ch..(i + 1) * ch]);
            s
        })
        .collect();
    (out, caches)
}
