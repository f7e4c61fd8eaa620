//! Brute-force reference searches. Linear scans, no index.

use rayon::prelude::*;

use crate::geom::Point3;

/// Ids of the `k` nearest points with squared distance `< r²`, ascending by
/// (distance², id).
pub fn brute_force_knn(points: &[Point3], q: &Point3, r: f64, k: usize) -> Vec<u32> {
    let r2 = r * r;
    let mut within: Vec<(f64, u32)> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let d2 = q.dist2(p);
            (d2 < r2).then_some((d2, i as u32))
        })
        .collect();
    within.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    within.truncate(k);
    within.into_iter().map(|(_, id)| id).collect()
}

/// Ascending ids of every point with squared distance `< r²`.
pub fn brute_force_range(points: &[Point3], q: &Point3, r: f64) -> Vec<u32> {
    let r2 = r * r;
    (0..points.len() as u32).filter(|&i| q.dist2(&points[i as usize]) < r2).collect()
}

/// Number of points within L-infinity distance `half_width` (closed).
pub fn count_within_linf(points: &[Point3], q: &Point3, half_width: f64) -> usize {
    points.iter().filter(|p| p.linf_dist(q) <= half_width).count()
}

/// [`brute_force_knn`] for every query, in parallel.
pub fn brute_force_knn_all(points: &[Point3], queries: &[Point3], r: f64, k: usize) -> Vec<Vec<u32>> {
    queries.par_iter().map(|q| brute_force_knn(points, q, r, k)).collect()
}

/// [`brute_force_range`] for every query, in parallel.
pub fn brute_force_range_all(points: &[Point3], queries: &[Point3], r: f64) -> Vec<Vec<u32>> {
    queries.par_iter().map(|q| brute_force_range(points, q, r)).collect()
}
