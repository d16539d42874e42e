use super::{closed_edges, Point2, Polygon};

/// Row-major binary occupancy grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskGrid {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl MaskGrid {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, bits: vec![false; height * width] }
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.width + c] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(v: &[Point2], p: Point2) -> bool {
    let mut inside = false;
    for (a, b) in closed_edges(v) {
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

pub fn rasterize(p: &Polygon, h: usize, w: usize) -> MaskGrid {
    rasterize_points(p.vertices(), h, w)
}

/// Scanline fill: pixel `(r, c)` is set iff its center `(c + 0.5, r + 0.5)`
/// is inside under the even-odd rule. Works on any vertex ring, including
/// degenerate or self-intersecting predictions.
pub fn rasterize_points(v: &[Point2], h: usize, w: usize) -> MaskGrid {
    let mut mask = MaskGrid::new(h, w);
    if v.len() < 3 {
        return mask;
    }
    let mut xs = Vec::new();
    for r in 0..h {
        let y = r as f64 + 0.5;
        xs.clear();
        for (a, b) in closed_edges(v) {
            if (a.y > y) != (b.y > y) {
                xs.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            // columns whose center lies in [span[0], span[1])
            let lo = (span[0] - 0.5).ceil().clamp(0.0, w as f64) as usize;
            let hi = (span[1] - 0.5).ceil().clamp(0.0, w as f64) as usize;
            for c in lo..hi {
                mask.bits[r * w + c] = true;
            }
        }
    }
    mask
}
