//! Training labels per instance.
//!
//! A label holds the N-vertex ground-truth contour sampled with multi-direction
//! alignment (MDA), the boundary points obtained by splitting each contour edge
//! into `k` pieces, and the Douglas-Peucker key vertices of the annotation.
//!
//! MDA fixes `M` vertices on rays cast from the instance center at equally
//! spaced angles and spaces the remaining vertices uniformly by arc length
//! between consecutive fixed ones. `M == N` is pure polar sampling; `M == 0`
//! is plain uniform resampling starting at the `start_angle` ray hit.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    self, douglas_peucker, interpolate_subsegments, normalize_orientation, point_in_polygon,
    ray_boundary_intersection, resample_uniform, BoundaryWalk, Contour, GeometryError, Point2, Polygon,
    RayHit,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("neither the bounding-box center nor the centroid lies inside the polygon")]
    CenterOutside,
    #[error("invalid MDA config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, LabelError>;

/// Douglas-Peucker tolerance, absolute or relative to the larger bbox side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpEpsilon {
    Pixels(f64),
    BboxFraction(f64),
}

impl DpEpsilon {
    pub fn resolve(self, p: &Polygon) -> f64 {
        match self {
            DpEpsilon::Pixels(e) => e,
            DpEpsilon::BboxFraction(f) => {
                let b = p.bbox();
                f * b.width().max(b.height())
            }
        }
    }
}

/// Polygon the key vertices are extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeySource {
    #[default]
    Raw,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdaConfig {
    /// N, vertices per contour.
    pub n_vertices: usize,
    /// M, number of direction-aligned vertices.
    pub m_aligned: usize,
    pub start_angle: f64,
    /// k, sub-segments per contour edge for the interpolated boundary.
    pub subsegments: usize,
    pub dp_eps: DpEpsilon,
    pub key_source: KeySource,
    pub ray_hit: RayHit,
}

impl Default for MdaConfig {
    fn default() -> Self {
        Self {
            n_vertices: 128,
            m_aligned: 4,
            start_angle: 0.0,
            subsegments: 10,
            dp_eps: DpEpsilon::BboxFraction(0.01),
            key_source: KeySource::Raw,
            ray_hit: RayHit::Farthest,
        }
    }
}

impl MdaConfig {
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n_vertices, self.m_aligned);
        if n < 3 {
            return Err(LabelError::InvalidConfig(format!("n_vertices must be >= 3, got {n}")));
        }
        if m > n || (m > 0 && n % m != 0) {
            return Err(LabelError::InvalidConfig(format!("m_aligned={m} must divide n_vertices={n}")));
        }
        if self.subsegments == 0 {
            return Err(LabelError::InvalidConfig("subsegments must be >= 1".into()));
        }
        let eps = match self.dp_eps {
            DpEpsilon::Pixels(e) | DpEpsilon::BboxFraction(e) => e,
        };
        if !(eps > 0.0) {
            return Err(LabelError::InvalidConfig("dp_eps must be > 0".into()));
        }
        Ok(())
    }

    /// Indices of the direction-aligned vertices.
    pub fn fixed_indices(&self) -> Vec<usize> {
        match self.m_aligned {
            0 => vec![],
            m => (0..m).map(|j| j * self.n_vertices / m).collect(),
        }
    }

    /// Ray angle of aligned vertex `j`.
    pub fn fixed_angle(&self, j: usize) -> f64 {
        self.start_angle + TAU * j as f64 / self.m_aligned.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    /// Annotation polygon, counter-clockwise.
    pub raw_polygon: Polygon,
    pub center: Point2,
    pub gt_contour: Contour,
    pub gt_interp: Vec<Point2>,
    pub gt_keys: Vec<Point2>,
}

impl LabeledInstance {
    pub fn n_key(&self) -> usize {
        self.gt_keys.len()
    }
}

fn strictly_inside(p: &Polygon, q: Point2) -> bool {
    point_in_polygon(p.vertices(), q) && p.boundary_distance(q) > 1e-9
}

/// Bounding-box center, or the area centroid when the bbox center is not
/// strictly inside.
pub fn compute_center(p: &Polygon) -> Result<Point2> {
    let c = p.bbox().center();
    if strictly_inside(p, c) {
        return Ok(c);
    }
    let c = p.centroid();
    if strictly_inside(p, c) {
        return Ok(c);
    }
    Err(LabelError::CenterOutside)
}

/// Multi-direction aligned sampling of `p` around `center`.
///
/// `p` is expected counter-clockwise so that increasing ray angles advance
/// along the vertex order.
pub fn mda_sample(p: &Polygon, center: Point2, cfg: &MdaConfig) -> Result<Contour> {
    cfg.validate()?;
    let n = cfg.n_vertices;
    if cfg.m_aligned == 0 {
        let start = ray_boundary_intersection(p, center, cfg.start_angle, cfg.ray_hit)?;
        return Ok(resample_uniform(p, n, start)?);
    }
    let m = cfg.m_aligned;
    let per_segment = n / m;
    let hits = (0..m)
        .map(|j| ray_boundary_intersection(p, center, cfg.fixed_angle(j), cfg.ray_hit))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let walk = BoundaryWalk::new(p);
    let perimeter = walk.perimeter();
    let arc: Vec<f64> = hits.iter().map(|&h| walk.locate(h).0).collect();

    let mut out = Vec::with_capacity(n);
    for j in 0..m {
        out.push(hits[j]);
        if per_segment == 1 {
            continue;
        }
        let span = if m == 1 {
            perimeter
        } else {
            // forward distance along the boundary to the next aligned vertex
            (arc[(j + 1) % m] - arc[j]).rem_euclid(perimeter)
        };
        for r in 1..per_segment {
            out.push(walk.point_at(arc[j] + span * r as f64 / per_segment as f64));
        }
    }
    Ok(Contour(out))
}

/// Builds the complete training label for one annotation polygon.
pub fn build_label(p: &Polygon, cfg: &MdaConfig) -> Result<LabeledInstance> {
    cfg.validate()?;
    let raw = normalize_orientation(p)?;
    let center = compute_center(&raw)?;
    let gt_contour = mda_sample(&raw, center, cfg)?;
    let gt_interp = interpolate_subsegments(gt_contour.points(), cfg.subsegments);
    let gt_keys = match cfg.key_source {
        KeySource::Raw => douglas_peucker(&raw, cfg.dp_eps.resolve(&raw)),
        KeySource::Sampled => {
            let sampled = Polygon::new(dedup_ring(gt_contour.points()))?;
            douglas_peucker(&sampled, cfg.dp_eps.resolve(&raw))
        }
    };
    Ok(LabeledInstance { raw_polygon: raw, center, gt_contour, gt_interp, gt_keys })
}

fn dedup_ring(v: &[Point2]) -> Vec<Point2> {
    let mut out: Vec<Point2> = Vec::with_capacity(v.len());
    for &p in v {
        if out.last().is_none_or(|q| q.dist(p) > geometry::MIN_VERTEX_GAP) {
            out.push(p);
        }
    }
    while out.len() > 1 && out[0].dist(out[out.len() - 1]) <= geometry::MIN_VERTEX_GAP {
        out.pop();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::boundary_distance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(c: Point2, half: f64) -> Polygon {
        Polygon::new(
            [[-1., -1.], [1., -1.], [1., 1.], [-1., 1.]]
                .map(|p| c + Point2::from(p) * half)
                .to_vec(),
        )
        .unwrap()
    }

    fn star_shaped(rng: &mut ChaCha8Rng, n: usize) -> Polygon {
        let v = (0..n)
            .map(|i| Point2::from_polar(rng.gen_range(4.0..10.0), TAU * i as f64 / n as f64))
            .collect();
        Polygon::new(v).unwrap()
    }

    fn smooth_blob(rng: &mut ChaCha8Rng, n: usize) -> Polygon {
        let harmonics: Vec<(f64, f64)> =
            (2..=4).map(|_| (rng.gen_range(-0.12..0.12), rng.gen_range(0.0..TAU))).collect();
        let v = (0..n)
            .map(|i| {
                let t = TAU * i as f64 / n as f64;
                let r = 10.0 * (1.0 + harmonics.iter().enumerate().map(|(k, (a, ph))| a * ((k + 2) as f64 * t + ph).cos()).sum::<f64>());
                Point2::from_polar(r, t)
            })
            .collect();
        Polygon::new(v).unwrap()
    }

    fn cfg(n: usize, m: usize) -> MdaConfig {
        MdaConfig { n_vertices: n, m_aligned: m, ..Default::default() }
    }

    #[test]
    fn center_of_square() {
        let c = compute_center(&square(Point2::new(1., 1.), 1.0)).unwrap();
        assert_eq!(c, Point2::new(1., 1.));
    }

    #[test]
    fn center_translates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = star_shaped(&mut rng, 12);
        let d = Point2::new(13.5, -7.25);
        let c0 = compute_center(&p).unwrap();
        let c1 = compute_center(&p.map(|q| q + d).unwrap()).unwrap();
        assert!((c1 - (c0 + d)).norm() < 1e-12);
    }

    #[test]
    fn l_shape_falls_back_to_centroid() {
        // L whose bbox center (5, 5) is outside the polygon.
        let v = [[0., 0.], [10., 0.], [10., 4.], [4., 4.], [4., 10.], [0., 10.]];
        let p = Polygon::new(v.map(Point2::from).to_vec()).unwrap();
        let bb = p.bbox().center();
        assert!(!point_in_polygon(p.vertices(), bb));
        let c = compute_center(&p).unwrap();
        assert_eq!(c, p.centroid());
        assert!(point_in_polygon(p.vertices(), c));
    }

    #[test]
    fn center_outside_for_thin_ring_like_shape() {
        // C-shape with both bbox center and centroid in the gap.
        let v = [
            [0., 0.], [10., 0.], [10., 1.], [1., 1.], [1., 9.], [10., 9.], [10., 10.], [0., 10.],
        ];
        let p = Polygon::new(v.map(Point2::from).to_vec()).unwrap();
        assert_eq!(compute_center(&p), Err(LabelError::CenterOutside));
    }

    #[test]
    fn square_m4_n8() {
        let p = square(Point2::ZERO, 1.0);
        let c = mda_sample(&p, Point2::ZERO, &cfg(8, 4)).unwrap();
        let want = [[1., 0.], [1., 1.], [0., 1.], [-1., 1.], [-1., 0.], [-1., -1.], [0., -1.], [1., -1.]]
            .map(Point2::from);
        for (a, b) in c.points().iter().zip(want) {
            assert!(a.dist(b) < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn m_equals_n_is_polar_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let p = star_shaped(&mut rng, 15);
            let c = mda_sample(&p, Point2::ZERO, &cfg(16, 16)).unwrap();
            for (j, q) in c.points().iter().enumerate() {
                let h = ray_boundary_intersection(&p, Point2::ZERO, TAU * j as f64 / 16.0, RayHit::Farthest).unwrap();
                assert!(q.dist(h) < 1e-9);
            }
        }
    }

    #[test]
    fn m_zero_is_uniform_resampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = star_shaped(&mut rng, 15);
        let c = mda_sample(&p, Point2::ZERO, &cfg(32, 0)).unwrap();
        let start = ray_boundary_intersection(&p, Point2::ZERO, 0.0, RayHit::Farthest).unwrap();
        let u = resample_uniform(&p, 32, start).unwrap();
        for (a, b) in c.points().iter().zip(u.points()) {
            assert!(a.dist(*b) < 1e-9);
        }
    }

    #[test]
    fn quadrant_gaps_are_equal_arc_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let p = star_shaped(&mut rng, 12);
            let c = mda_sample(&p, Point2::ZERO, &cfg(32, 4)).unwrap();
            // dense walk oracle: arc position by accumulating edge lengths
            let arc = |q: Point2| -> f64 {
                let mut acc = 0.0;
                let mut best = (f64::INFINITY, 0.0);
                for (a, b) in p.edges() {
                    let l = a.dist(b);
                    let t = ((q - a).dot(b - a) / (l * l)).clamp(0.0, 1.0);
                    let d = q.dist(a.lerp(b, t));
                    if d < best.0 {
                        best = (d, acc + t * l);
                    }
                    acc += l;
                }
                best.1
            };
            let per = p.perimeter();
            for seg in 0..4 {
                let idx: Vec<usize> = (seg * 8..=seg * 8 + 8).map(|i| i % 32).collect();
                let gaps: Vec<f64> =
                    idx.windows(2).map(|w| (arc(c[w[1]]) - arc(c[w[0]])).rem_euclid(per)).collect();
                for g in &gaps {
                    assert!((g - gaps[0]).abs() < 1e-9, "{gaps:?}");
                }
            }
        }
    }

    #[test]
    fn fixed_vertices_lie_on_their_rays() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = star_shaped(&mut rng, 20);
            let center = Point2::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let mut c = cfg(32, 8);
            c.start_angle = rng.gen_range(0.0..TAU);
            let out = mda_sample(&p, center, &c).unwrap();
            for (j, &i) in c.fixed_indices().iter().enumerate() {
                let d = out[i] - center;
                let err = (d.y.atan2(d.x) - c.fixed_angle(j)).rem_euclid(TAU);
                assert!(err.min(TAU - err) < 1e-9);
            }
        }
    }

    #[test]
    fn rotation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let p = Polygon::new(
                star_shaped(&mut rng, 14).vertices().iter().map(|&q| q * 0.1).collect(),
            )
            .unwrap();
            let theta = rng.gen_range(0.0..TAU);
            let center = Point2::new(0.05, -0.02);
            let c0 = cfg(32, 4);
            let mut c1 = c0.clone();
            c1.start_angle = theta;
            let a = mda_sample(&p, center, &c0).unwrap();
            let pr = p.map(|q| q.rotate(theta)).unwrap();
            let b = mda_sample(&pr, center.rotate(theta), &c1).unwrap();
            for (x, y) in a.points().iter().zip(b.points()) {
                assert!(x.rotate(theta).dist(*y) < 1e-7);
            }
        }
    }

    /// Per-shape maximum deviation is not monotone in M (it can grow where a
    /// new aligned vertex shifts arc-length spacing), so the property is
    /// asserted on the population mean over smooth blobs.
    #[test]
    fn angular_deviation_shrinks_as_m_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let shapes: Vec<Polygon> = (0..200).map(|_| smooth_blob(&mut rng, 64)).collect();
        let mut prev = f64::INFINITY;
        for m in [1, 2, 4, 8] {
            let mean_max = shapes
                .iter()
                .map(|p| {
                    let out = mda_sample(p, Point2::ZERO, &cfg(64, m)).unwrap();
                    out.points()
                        .iter()
                        .enumerate()
                        .map(|(i, q)| {
                            let e = (q.y.atan2(q.x) - TAU * i as f64 / 64.0).rem_euclid(TAU);
                            e.min(TAU - e)
                        })
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / shapes.len() as f64;
            assert!(mean_max <= prev, "M={m}: {mean_max} > {prev}");
            prev = mean_max;
        }
    }

    #[test]
    fn square_label_counts() {
        let p = square(Point2::new(5., 5.), 2.0);
        // rays through the corners, so every contour edge is a square side
        let mut c = cfg(4, 4);
        c.start_angle = std::f64::consts::FRAC_PI_4;
        let l = build_label(&p, &c).unwrap();
        assert_eq!(l.gt_interp.len(), 40);
        for q in &l.gt_interp {
            assert!(boundary_distance(l.raw_polygon.vertices(), *q) < 1e-12);
        }
    }

    #[test]
    fn convex_keys_are_all_vertices() {
        let v: Vec<Point2> = (0..9).map(|i| Point2::from_polar(10.0, TAU * i as f64 / 9.0)).collect();
        let p = Polygon::new(v).unwrap();
        let mut c = cfg(32, 4);
        c.dp_eps = DpEpsilon::Pixels(0.1);
        let l = build_label(&p, &c).unwrap();
        assert_eq!(l.gt_keys, p.vertices().to_vec());
    }

    #[test]
    fn random_label_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let p = star_shaped(&mut rng, 40);
            let l = build_label(&p, &MdaConfig::default()).unwrap();
            assert_eq!(l.gt_contour.len(), 128);
            assert_eq!(l.gt_interp.len(), 1280);
            assert!(l.n_key() <= p.len() && l.n_key() >= 3);
            for k in &l.gt_keys {
                assert!(l.raw_polygon.vertices().contains(k));
            }
            for q in l.gt_contour.points() {
                assert!(boundary_distance(l.raw_polygon.vertices(), *q) < 1e-6);
            }
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(cfg(32, 5).validate().is_err());
        assert!(cfg(32, 64).validate().is_err());
        assert!(cfg(2, 0).validate().is_err());
        assert!(cfg(32, 0).validate().is_ok());
        assert!(cfg(32, 32).validate().is_ok());
    }

    #[test]
    fn clockwise_input_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = star_shaped(&mut rng, 16);
        let mut rv = p.vertices().to_vec();
        rv.reverse();
        let a = build_label(&p, &cfg(32, 4)).unwrap();
        let b = build_label(&Polygon::new(rv).unwrap(), &cfg(32, 4)).unwrap();
        for (x, y) in a.gt_contour.points().iter().zip(b.gt_contour.points()) {
            assert!(x.dist(*y) < 1e-9);
        }
    }
}
