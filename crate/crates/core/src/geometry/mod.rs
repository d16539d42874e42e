//! Ordered-polygon primitives shared by the labeling, loss and evaluation code.
//!
//! Coordinates are image pixels. A [`Polygon`] is closed implicitly (the last
//! vertex connects back to the first); a [`Contour`] is the fixed-length vertex
//! sequence the model regresses.

mod iou;
mod raster;
mod ray;
mod resample;
mod simplify;

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use iou::{boundary_band, boundary_iou, erode, mask_iou};
pub use raster::{point_in_polygon, rasterize, rasterize_points, MaskGrid};
pub use ray::{ray_boundary_intersection, RayHit};
pub use resample::{interpolate_subsegments, resample_uniform, BoundaryWalk};
pub use simplify::{douglas_peucker, douglas_peucker_indices};

/// Minimum separation between consecutive polygon vertices.
pub const MIN_VERTEX_GAP: f64 = 1e-9;
/// Signed areas below this are treated as degenerate.
pub const MIN_AREA: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("vertex {0} is not finite")]
    NonFinite(usize),
    #[error("vertices {0} and {1} coincide")]
    DuplicateVertex(usize, usize),
    #[error("polygon has zero area")]
    ZeroArea,
    #[error("start point is {0:.3e} px away from the boundary")]
    StartOffBoundary(f64),
    #[error("ray does not intersect the boundary")]
    NoIntersection,
    #[error("mask dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// A 2-D point in pixel coordinates. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_polar(radius: f64, angle: f64) -> Self {
        Self::new(radius * angle.cos(), radius * angle.sin())
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn l1(self) -> f64 {
        self.x.abs() + self.y.abs()
    }

    pub fn dist(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    pub fn dist_sq(self, o: Point2) -> f64 {
        (self - o).norm_sq()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, o: Point2, t: f64) -> Point2 {
        Point2::new(self.x + (o.x - self.x) * t, self.y + (o.y - self.y) * t)
    }

    /// Rotates about the origin by `angle` radians.
    pub fn rotate(self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

/// A simple closed polygon with at least three distinct consecutive vertices.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Polygon {
    vertices: Vec<Point2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point2>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(GeometryError::TooFewVertices(n));
        }
        if let Some(i) = vertices.iter().position(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite(i));
        }
        for i in 0..n {
            let j = (i + 1) % n;
            if vertices[i].dist(vertices[j]) <= MIN_VERTEX_GAP {
                return Err(GeometryError::DuplicateVertex(i, j));
            }
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn into_vertices(self) -> Vec<Point2> {
        self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Edge `i` runs from vertex `i` to vertex `i + 1` (wrapping).
    pub fn edge(&self, i: usize) -> (Point2, Point2) {
        let n = self.vertices.len();
        (self.vertices[i], self.vertices[(i + 1) % n])
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        closed_edges(&self.vertices)
    }

    pub fn perimeter(&self) -> f64 {
        polygon_perimeter(self)
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn bbox(&self) -> BBox {
        BBox::of(&self.vertices)
    }

    pub fn map(&self, f: impl Fn(Point2) -> Point2) -> Result<Polygon> {
        Polygon::new(self.vertices.iter().map(|&p| f(p)).collect())
    }

    /// Area centroid; falls back to the vertex mean for near-zero area.
    pub fn centroid(&self) -> Point2 {
        let a = self.signed_area();
        if a.abs() < MIN_AREA {
            let n = self.len() as f64;
            let s = self.vertices.iter().fold(Point2::ZERO, |acc, &p| acc + p);
            return s * (1.0 / n);
        }
        let (mut cx, mut cy) = (0.0, 0.0);
        for (p, q) in self.edges() {
            let w = p.cross(q);
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        Point2::new(cx / (6.0 * a), cy / (6.0 * a))
    }

    /// Minimum distance from `p` to any edge.
    pub fn boundary_distance(&self, p: Point2) -> f64 {
        boundary_distance(&self.vertices, p)
    }
}

impl<'de> Deserialize<'de> for Polygon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let vertices = Vec::<Point2>::deserialize(d)?;
        Polygon::new(vertices).map_err(serde::de::Error::custom)
    }
}

/// The model's fixed-length vertex sequence. Vertex order is meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Contour(pub Vec<Point2>);

impl Contour {
    pub fn new(vertices: Vec<Point2>) -> Self {
        Contour(vertices)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn points(&self) -> &[Point2] {
        &self.0
    }

    /// Cyclic shift: output vertex `i` is input vertex `i + s`.
    pub fn shifted(&self, s: usize) -> Contour {
        let n = self.0.len();
        Contour((0..n).map(|i| self.0[(i + s) % n]).collect())
    }

    pub fn translated(&self, d: Point2) -> Contour {
        Contour(self.0.iter().map(|&p| p + d).collect())
    }
}

impl std::ops::Index<usize> for Contour {
    type Output = Point2;
    fn index(&self, i: usize) -> &Point2 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min: Point2,
    pub max: Point2,
}

impl BBox {
    pub fn of(points: &[Point2]) -> BBox {
        let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        BBox { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Point2 {
        self.min.lerp(self.max, 0.5)
    }
}

pub(crate) fn closed_edges(v: &[Point2]) -> impl Iterator<Item = (Point2, Point2)> + '_ {
    let n = v.len();
    (0..n).map(move |i| (v[i], v[(i + 1) % n]))
}

/// Sum of edge lengths including the closing edge.
pub fn polygon_perimeter(p: &Polygon) -> f64 {
    closed_perimeter(p.vertices())
}

pub fn closed_perimeter(v: &[Point2]) -> f64 {
    closed_edges(v).map(|(a, b)| a.dist(b)).sum()
}

/// Shoelace signed area; positive for counter-clockwise order.
pub fn signed_area(v: &[Point2]) -> f64 {
    0.5 * closed_edges(v).map(|(a, b)| a.cross(b)).sum::<f64>()
}

/// Returns the polygon in counter-clockwise order (positive signed area).
pub fn normalize_orientation(p: &Polygon) -> Result<Polygon> {
    let a = p.signed_area();
    if a.abs() < MIN_AREA {
        return Err(GeometryError::ZeroArea);
    }
    if a > 0.0 {
        return Ok(p.clone());
    }
    let mut v = p.vertices().to_vec();
    v.reverse();
    Polygon::new(v)
}

/// Distance from `p` to the segment `a`–`b`, and the segment parameter of the
/// closest point.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> (f64, f64) {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    let t = if len_sq > 0.0 {
        ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.dist(a.lerp(b, t)), t)
}

pub fn boundary_distance(v: &[Point2], p: Point2) -> f64 {
    closed_edges(v)
        .map(|(a, b)| point_segment_distance(p, a, b).0)
        .fold(f64::INFINITY, f64::min)
}

/// True when two non-adjacent edges intersect or adjacent edges overlap.
pub fn is_self_intersecting(v: &[Point2]) -> bool {
    let n = v.len();
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        for j in (i + 1)..n {
            let (c, d) = (v[j], v[(j + 1) % n]);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // Adjacent edges share a vertex; they only conflict if they fold back.
                let shared = if j == i + 1 { b } else { a };
                let (u, w) = if j == i + 1 { (a - shared, d - shared) } else { (b - shared, c - shared) };
                if u.cross(w).abs() < 1e-12 && u.dot(w) > 0.0 {
                    return true;
                }
                continue;
            }
            if segments_intersect(a, b, c, d) {
                return true;
            }
        }
    }
    false
}

fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = (b - a).cross(c - a);
    let d2 = (b - a).cross(d - a);
    let d3 = (d - c).cross(a - c);
    let d4 = (d - c).cross(b - c);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: Point2, q: Point2, r: Point2, cr: f64| {
        cr == 0.0 && r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    on(a, b, c, d1) || on(a, b, d, d2) || on(c, d, a, d3) || on(c, d, b, d4)
}
