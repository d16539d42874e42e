use super::{point_segment_distance, Contour, GeometryError, Point2, Polygon, Result};

/// Start points farther than this from the boundary are rejected.
pub const ON_BOUNDARY_TOL: f64 = 1e-6;

/// Arc-length parameterization of a closed polygon boundary.
///
/// Arc position 0 is vertex 0; positions increase along the vertex order.
#[derive(Debug, Clone)]
pub struct BoundaryWalk<'a> {
    vertices: &'a [Point2],
    /// `cum[i]` is the arc position of vertex `i`; `cum[n]` is the perimeter.
    cum: Vec<f64>,
}

impl<'a> BoundaryWalk<'a> {
    pub fn new(polygon: &'a Polygon) -> Self {
        let vertices = polygon.vertices();
        let n = vertices.len();
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for i in 0..n {
            acc += vertices[i].dist(vertices[(i + 1) % n]);
            cum.push(acc);
        }
        Self { vertices, cum }
    }

    pub fn perimeter(&self) -> f64 {
        self.cum[self.vertices.len()]
    }

    /// Arc position of the boundary point closest to `p`, with its distance.
    pub fn locate(&self, p: Point2) -> (f64, f64) {
        let n = self.vertices.len();
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            let (d, t) = point_segment_distance(p, a, b);
            if d < best.0 {
                best = (d, self.cum[i] + t * (self.cum[i + 1] - self.cum[i]));
            }
        }
        let s = if best.1 >= self.perimeter() { 0.0 } else { best.1 };
        (s, best.0)
    }

    /// Boundary point at arc position `s` (wrapped into `[0, perimeter)`).
    pub fn point_at(&self, s: f64) -> Point2 {
        let per = self.perimeter();
        let mut s = s.rem_euclid(per);
        if s >= per {
            s = 0.0;
        }
        let n = self.vertices.len();
        // last edge whose start position is <= s
        let e = self.cum[..n].partition_point(|&c| c <= s).saturating_sub(1);
        let len = self.cum[e + 1] - self.cum[e];
        let t = if len > 0.0 { ((s - self.cum[e]) / len).clamp(0.0, 1.0) } else { 0.0 };
        self.vertices[e].lerp(self.vertices[(e + 1) % n], t)
    }
}

/// Samples `n` points at equal arc-length spacing, beginning at `start` and
/// following the polygon's vertex order.
pub fn resample_uniform(p: &Polygon, n: usize, start: Point2) -> Result<Contour> {
    if n < 3 {
        return Err(GeometryError::InvalidArgument(format!("n must be >= 3, got {n}")));
    }
    let walk = BoundaryWalk::new(p);
    let (s0, d) = walk.locate(start);
    if d > ON_BOUNDARY_TOL {
        return Err(GeometryError::StartOffBoundary(d));
    }
    let step = walk.perimeter() / n as f64;
    Ok(Contour((0..n).map(|i| walk.point_at(s0 + i as f64 * step)).collect()))
}

/// Splits every edge `(v_i, v_{i+1})` into `k` equal pieces, emitting `v_i`
/// followed by the `k - 1` interior points. Returns `k * len` points.
pub fn interpolate_subsegments(c: &[Point2], k: usize) -> Vec<Point2> {
    let n = c.len();
    let k = k.max(1);
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        let (a, b) = (c[i], c[(i + 1) % n]);
        out.push(a);
        for j in 1..k {
            out.push(a.lerp(b, j as f64 / k as f64));
        }
    }
    out
}
