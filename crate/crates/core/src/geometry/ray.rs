use serde::{Deserialize, Serialize};

use super::{GeometryError, Point2, Polygon, Result};

/// Which crossing to keep when a ray leaves and re-enters a concave polygon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RayHit {
    #[default]
    Farthest,
    Nearest,
}

/// Intersection of the ray `center + t * (cos angle, sin angle)`, `t > 0`,
/// with the polygon boundary.
pub fn ray_boundary_intersection(p: &Polygon, center: Point2, angle: f64, pick: RayHit) -> Result<Point2> {
    let dir = Point2::new(angle.cos(), angle.sin());
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t <= 1e-12 {
            return;
        }
        best = Some(match (best, pick) {
            (None, _) => t,
            (Some(b), RayHit::Farthest) => b.max(t),
            (Some(b), RayHit::Nearest) => b.min(t),
        });
    };
    for (a, b) in p.edges() {
        let e = b - a;
        let w = a - center;
        let denom = dir.cross(e);
        let scale = e.norm().max(1e-300);
        if denom.abs() <= 1e-14 * scale {
            // parallel: only a collinear edge can touch the ray, at its endpoints
            if w.cross(dir).abs() <= 1e-12 * w.norm().max(1.0) {
                consider(w.dot(dir));
                consider((b - center).dot(dir));
            }
            continue;
        }
        let t = w.cross(e) / denom;
        let u = w.cross(dir) / denom;
        if (-1e-12..=1.0 + 1e-12).contains(&u) {
            consider(t);
        }
    }
    best.map(|t| center + dir * t).ok_or(GeometryError::NoIntersection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, TAU};

    fn square2() -> Polygon {
        Polygon::new([[-1., -1.], [1., -1.], [1., 1.], [-1., 1.]].map(Point2::from).to_vec()).unwrap()
    }

    /// Concave star: alternating radii 10 and 3 around the origin.
    fn star() -> Polygon {
        let v = (0..10)
            .map(|i| Point2::from_polar(if i % 2 == 0 { 10.0 } else { 3.0 }, TAU * i as f64 / 10.0))
            .collect();
        Polygon::new(v).unwrap()
    }

    #[test]
    fn axis_and_diagonal_hits() {
        let h = ray_boundary_intersection(&square2(), Point2::ZERO, 0.0, RayHit::Farthest).unwrap();
        assert!(h.dist(Point2::new(1., 0.)) < 1e-12);
        let h = ray_boundary_intersection(&square2(), Point2::ZERO, FRAC_PI_4, RayHit::Farthest).unwrap();
        assert!(h.dist(Point2::new(1., 1.)) < 1e-12);
    }

    #[test]
    fn farthest_of_multiple_crossings_matches_dense_scan() {
        let p = star();
        // From an off-center point the ray crosses the boundary several times.
        let center = Point2::new(7.0, 0.3);
        let angle: f64 = 160f64.to_radians();
        let dir = Point2::new(angle.cos(), angle.sin());
        let mut crossings = 0;
        let mut best_t = 0.0_f64;
        // dense boundary walk: boundary samples lying on the ray
        for (a, b) in p.edges() {
            let steps = 200_000;
            let mut prev = (a - center).cross(dir);
            for s in 1..=steps {
                let q = a.lerp(b, s as f64 / steps as f64);
                let cur = (q - center).cross(dir);
                if prev.signum() != cur.signum() && (q - center).dot(dir) > 0.0 {
                    crossings += 1;
                    best_t = best_t.max((q - center).dot(dir));
                }
                prev = cur;
            }
        }
        assert!(crossings >= 3, "expected a multi-crossing ray, got {crossings}");
        let h = ray_boundary_intersection(&p, center, angle, RayHit::Farthest).unwrap();
        assert!(((h - center).dot(dir) - best_t).abs() < 1e-3);
        let near = ray_boundary_intersection(&p, center, angle, RayHit::Nearest).unwrap();
        assert!((near - center).norm() < (h - center).norm());
    }

    #[test]
    fn hits_lie_on_ray_and_boundary() {
        let p = star();
        for k in 0..360 {
            let angle = TAU * k as f64 / 360.0;
            let c = Point2::new(0.3, -0.2);
            let h = ray_boundary_intersection(&p, c, angle, RayHit::Farthest).unwrap();
            let dir = Point2::new(angle.cos(), angle.sin());
            assert!((h - c).cross(dir).abs() < 1e-9);
            assert!(p.boundary_distance(h) < 1e-9);
        }
    }

    #[test]
    fn ray_from_outside_pointing_away_misses() {
        let e = ray_boundary_intersection(&square2(), Point2::new(5., 0.), 0.0, RayHit::Farthest);
        assert_eq!(e, Err(GeometryError::NoIntersection));
    }
}
