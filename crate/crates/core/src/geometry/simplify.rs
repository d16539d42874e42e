use super::{point_segment_distance, Point2, Polygon};

/// Douglas-Peucker simplification of a closed polygon.
///
/// The ring is split at vertex 0 and the vertex farthest from it; each chain
/// is simplified independently, so both split vertices are always kept. If
/// fewer than three vertices survive, vertex 0, the split vertex and the
/// vertex farthest from the line through them are returned.
pub fn douglas_peucker(p: &Polygon, eps: f64) -> Vec<Point2> {
    douglas_peucker_indices(p.vertices(), eps)
        .into_iter()
        .map(|i| p.vertices()[i])
        .collect()
}

/// Indices (ascending) of the vertices kept by [`douglas_peucker`].
pub fn douglas_peucker_indices(v: &[Point2], eps: f64) -> Vec<usize> {
    let n = v.len();
    if n <= 3 {
        return (0..n).collect();
    }
    let far = (1..n).fold(1, |best, i| if v[i].dist_sq(v[0]) > v[best].dist_sq(v[0]) { i } else { best });
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[far] = true;
    simplify_chain(v, 0, far, eps, &mut keep);
    simplify_chain(v, far, n, eps, &mut keep);

    let mut out: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    if out.len() < 3 {
        let (a, b) = (v[0], v[far]);
        let third = (1..n)
            .filter(|&i| i != far)
            .max_by(|&i, &j| {
                let di = (b - a).cross(v[i] - a).abs();
                let dj = (b - a).cross(v[j] - a).abs();
                di.total_cmp(&dj).then(j.cmp(&i))
            })
            .expect("n > 3");
        out = vec![0, far, third];
        out.sort_unstable();
    }
    out
}

/// Marks vertices strictly between `start` and `end` (index `n` meaning 0)
/// whose deviation from the chord exceeds `eps`.
fn simplify_chain(v: &[Point2], start: usize, end: usize, eps: f64, keep: &mut [bool]) {
    let n = v.len();
    let mut stack = vec![(start, end)];
    while let Some((s, e)) = stack.pop() {
        if e <= s + 1 {
            continue;
        }
        let (a, b) = (v[s], v[e % n]);
        let mut best = (s, -1.0);
        for (i, &q) in v.iter().enumerate().take(e).skip(s + 1) {
            let d = point_segment_distance(q, a, b).0;
            if d > best.1 {
                best = (i, d);
            }
        }
        if best.1 > eps {
            keep[best.0] = true;
            stack.push((best.0, e));
            stack.push((s, best.0));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::closed_edges;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn jagged(rng: &mut ChaCha8Rng, n: usize) -> Polygon {
        let v = (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n as f64;
                Point2::from_polar(rng.gen_range(15.0..25.0), a)
            })
            .collect();
        Polygon::new(v).unwrap()
    }

    /// Max distance of any input vertex to the simplified closed polyline.
    fn max_deviation(input: &[Point2], simplified: &[Point2]) -> f64 {
        input
            .iter()
            .map(|&q| {
                closed_edges(simplified)
                    .map(|(a, b)| {
                        // independent projection formula
                        let ab = b - a;
                        let t = ((q.x - a.x) * ab.x + (q.y - a.y) * ab.y) / (ab.x * ab.x + ab.y * ab.y);
                        let t = t.clamp(0.0, 1.0);
                        ((q.x - a.x - t * ab.x).powi(2) + (q.y - a.y - t * ab.y).powi(2)).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn collinear_midpoints_removed() {
        let v = [[0., 0.], [1., 0.], [2., 0.], [2., 1.], [2., 2.], [1., 2.], [0., 2.], [0., 1.]];
        let p = Polygon::new(v.map(Point2::from).to_vec()).unwrap();
        let out = douglas_peucker(&p, 0.1);
        assert_eq!(out, [[0., 0.], [2., 0.], [2., 2.], [0., 2.]].map(Point2::from).to_vec());
    }

    #[test]
    fn tiny_eps_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p = jagged(&mut rng, 40);
            assert_eq!(douglas_peucker(&p, 1e-12), p.vertices().to_vec());
        }
    }

    #[test]
    fn deviation_bounded_by_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let p = jagged(&mut rng, 50);
            let out = douglas_peucker(&p, 1.0);
            assert!(out.len() >= 3);
            assert!(max_deviation(p.vertices(), &out) <= 1.0);
        }
    }

    #[test]
    fn output_is_ordered_subsequence_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let p = jagged(&mut rng, 60);
            let eps = rng.gen_range(0.2..4.0);
            let idx = douglas_peucker_indices(p.vertices(), eps);
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
            let once = douglas_peucker(&p, eps);
            let twice = douglas_peucker(&Polygon::new(once.clone()).unwrap(), eps);
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn huge_eps_falls_back_to_three_vertices() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = jagged(&mut rng, 30);
        let out = douglas_peucker_indices(p.vertices(), 1e6);
        assert_eq!(out.len(), 3);
    }
}
