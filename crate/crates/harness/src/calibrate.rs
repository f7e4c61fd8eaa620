//! Cost coefficient measurement. All coefficients are in milliseconds.

use std::time::Instant;

use serde::Serialize;

use raynn_core::bundle::CostCoefficients;
use raynn_core::bvh::Bvh;
use raynn_core::geom::Point3;
use raynn_core::pipeline::{knn_search, range_search, SearchConfig};

use crate::error::{Error, Result};

pub const MIN_SAMPLE: usize = 10_000;
const BUILD_REPEATS: usize = 3;
const MAX_PROBE_QUERIES: usize = 4_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares. Needs two distinct `x`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if xs.len() < 2 || sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit { slope, intercept: my - slope * mx, r_squared })
}

/// Fastest of `repeats` builds, in milliseconds.
pub fn time_bvh_build(points: &[Point3], half_width: f64, repeats: usize) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let bvh = Bvh::build(points, half_width)?;
        best = best.min(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(&bvh);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub coefficients: CostCoefficients,
    pub build_sizes: Vec<usize>,
    pub build_ms: Vec<f64>,
    pub build_fit: LinearFit,
    pub knn_visitor_calls: u64,
    pub range_neighbors: u64,
}

/// Time BVH builds at four sample sizes (slope gives k1), KNN search per
/// visitor call (k2) and range search per returned neighbor with and
/// without the sphere test (k3_test, k3_skip).
pub fn calibrate(sample: &[Point3], cfg: &SearchConfig) -> Result<Calibration> {
    cfg.validate()?;
    if sample.len() < MIN_SAMPLE {
        return Err(Error::Calibration(format!("need at least {MIN_SAMPLE} sample points, got {}", sample.len())));
    }
    let build_sizes: Vec<usize> = (1..=4).map(|i| sample.len() * i / 4).collect();
    let build_ms = build_sizes
        .iter()
        .map(|&n| time_bvh_build(&sample[..n], cfg.radius, BUILD_REPEATS))
        .collect::<Result<Vec<f64>>>()?;
    let xs: Vec<f64> = build_sizes.iter().map(|&n| n as f64).collect();
    let build_fit = fit_line(&xs, &build_ms).ok_or_else(|| Error::Calibration("degenerate build sizes".into()))?;

    let bvh = Bvh::build(sample, cfg.radius)?;
    let stride = (sample.len() / MAX_PROBE_QUERIES).max(1);
    let probes: Vec<Point3> = sample.iter().step_by(stride).copied().collect();

    let start = Instant::now();
    let knn = knn_search(&bvh, &probes, &SearchConfig::knn(cfg.radius, cfg.k));
    let knn_ms = start.elapsed().as_secs_f64() * 1e3;

    let range_cfg = SearchConfig::range(cfg.radius, cfg.k);
    let start = Instant::now();
    let tested = range_search(&bvh, &probes, &range_cfg);
    let test_ms = start.elapsed().as_secs_f64() * 1e3;
    let start = Instant::now();
    let skipped = range_search(&bvh, &probes, &SearchConfig { skip_sphere_test: true, ..range_cfg });
    let skip_ms = start.elapsed().as_secs_f64() * 1e3;

    let count = |rs: &raynn_core::pipeline::ResultSet| rs.neighbors.iter().map(|n| n.len() as u64).sum::<u64>();
    let (test_n, skip_n) = (count(&tested.results), count(&skipped.results));
    let knn_calls = knn.stats.visitor_calls;
    if build_fit.slope <= 0.0 || knn_ms <= 0.0 || test_ms <= 0.0 || skip_ms <= 0.0 {
        return Err(Error::Calibration("timer resolution too coarse".into()));
    }
    if knn_calls == 0 || test_n == 0 || skip_n == 0 {
        return Err(Error::Calibration("no neighbors within the radius; increase r".into()));
    }
    let coefficients = CostCoefficients {
        k1: build_fit.slope,
        k2: knn_ms / knn_calls as f64,
        k3_skip: skip_ms / skip_n as f64,
        k3_test: test_ms / test_n as f64,
    };
    coefficients.validate()?;
    Ok(Calibration { coefficients, build_sizes, build_ms, build_fit, knn_visitor_calls: knn_calls, range_neighbors: test_n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_points, Distribution};

    #[test]
    fn fit_exact_line() {
        let fit = fit_line(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit_line(&[1.0, 1.0], &[2.0, 3.0]).is_none());
        let noisy = fit_line(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!(noisy.r_squared > 0.0 && noisy.r_squared < 1.0);
    }

    #[test]
    fn calibration_is_positive() {
        let sample = synth_points(Distribution::Uniform, 40_000, 3);
        let cal = calibrate(&sample, &SearchConfig::knn(0.05, 8)).unwrap();
        let c = cal.coefficients;
        assert!(c.validate().is_ok());
        assert!(c.k3_skip < c.k3_test, "{c:?}");
        assert_eq!(cal.build_sizes.len(), 4);
    }

    #[test]
    fn small_sample_is_rejected() {
        let sample = synth_points(Distribution::Uniform, 100, 3);
        assert!(matches!(calibrate(&sample, &SearchConfig::knn(0.05, 8)), Err(Error::Calibration(_))));
    }
}
