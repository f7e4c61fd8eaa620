//! End-to-end search at a chosen optimization level.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use raynn_core::bundle::{apply_bundling, optimal_bundling, unbundled, Bundle, CostCoefficients, CostModel};
use raynn_core::bvh::{Bvh, TraversalStats};
use raynn_core::geom::Point3;
use raynn_core::oracle::{brute_force_knn, brute_force_range};
use raynn_core::partition::{build_grid, default_cell_width, partition_queries, PartitionKey, QueryPartition};
use raynn_core::pipeline::{search, OptLevel, ResultSet, SearchConfig, SearchMode};
use raynn_core::schedule::{first_hit_pass, reorder_queries, scheduling_scene};

use crate::calibrate::Calibration;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PhaseTimings {
    pub data_ms: f64,
    pub opt_ms: f64,
    pub bvh_ms: f64,
    pub first_search_ms: f64,
    pub search_ms: f64,
}

impl PhaseTimings {
    pub const PHASES: [&'static str; 5] = ["data", "opt", "bvh", "first_search", "search"];

    pub fn as_array(&self) -> [f64; 5] {
        [self.data_ms, self.opt_ms, self.bvh_ms, self.first_search_ms, self.search_ms]
    }

    pub fn total_ms(&self) -> f64 {
        self.as_array().iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PhaseStats {
    pub first_search: TraversalStats,
    pub search: TraversalStats,
    /// Largest visitor call count of any query in the first-hit pass.
    pub first_search_max_visitor_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionRow {
    pub key: PartitionKey,
    pub num_queries: usize,
    pub aabb_width: f64,
    pub megacell_width: f64,
    pub density: f64,
    pub needs_sphere_test: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BundleRow {
    pub members: Vec<usize>,
    pub num_queries: usize,
    pub aabb_width: f64,
    pub needs_sphere_test: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanSummary {
    pub cell_width: Option<f64>,
    pub grid_dims: Option<[usize; 3]>,
    /// Partitions by key; with widths and counts this is the query histogram.
    pub partitions: Vec<PartitionRow>,
    pub bundles: Vec<BundleRow>,
    pub estimated_cost: Option<f64>,
    pub assumption_held: Option<bool>,
    pub large_k: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub exact_match: bool,
    pub mismatched_queries: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: SearchConfig,
    pub num_points: usize,
    pub num_queries: usize,
    pub threads: usize,
    pub coefficients: CostCoefficients,
    pub timings: PhaseTimings,
    pub stats: PhaseStats,
    pub plan: PlanSummary,
    pub digest: String,
    pub oracle: Option<OracleCheck>,
    pub calibration: Option<Calibration>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: RunReport,
    pub results: ResultSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    pub coefficients: CostCoefficients,
    pub check_oracle: bool,
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn partition_row(p: &QueryPartition) -> PartitionRow {
    PartitionRow {
        key: p.key,
        num_queries: p.queries.len(),
        aabb_width: p.aabb_width,
        megacell_width: p.megacell_width,
        density: p.density,
        needs_sphere_test: p.needs_sphere_test,
    }
}

/// Run `cfg.opt_level` end to end. Results come back in input query order.
pub fn run_search(cfg: &SearchConfig, points: &[Point3], queries: &[Point3], opts: &RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    opts.coefficients.validate()?;
    let mut timings = PhaseTimings::default();
    let mut plan = PlanSummary {
        cell_width: None,
        grid_dims: None,
        partitions: Vec::new(),
        bundles: Vec::new(),
        estimated_cost: None,
        assumption_held: None,
        large_k: false,
    };

    let start = Instant::now();
    let bundles: Vec<Bundle> = match cfg.opt_level {
        OptLevel::None | OptLevel::Sched => vec![Bundle {
            members: Vec::new(),
            aabb_width: 2.0 * cfg.full_half_width(),
            needs_sphere_test: true,
            queries: (0..queries.len() as u32).collect(),
        }],
        OptLevel::SchedPart | OptLevel::SchedPartBundle => {
            let requested = cfg.cell_width.unwrap_or_else(|| default_cell_width(points, cfg.radius));
            let grid = build_grid(points, requested)?;
            let parts = partition_queries(queries, &grid, cfg);
            plan.cell_width = Some(grid.cell_width());
            plan.grid_dims = Some(grid.dims());
            plan.partitions = parts.iter().map(partition_row).collect();
            if cfg.opt_level == OptLevel::SchedPartBundle && !parts.is_empty() {
                let model =
                    CostModel { mode: cfg.mode, k: cfg.k, num_points: points.len(), coefficients: opts.coefficients };
                let summaries: Vec<_> = parts.iter().map(QueryPartition::summary).collect();
                let bundling = optimal_bundling(&summaries, &model);
                plan.estimated_cost = Some(bundling.estimated_cost);
                plan.assumption_held = Some(bundling.assumption_held);
                plan.large_k = bundling.large_k;
                apply_bundling(&parts, &bundling)
            } else {
                unbundled(&parts)
            }
        }
    };
    timings.opt_ms = elapsed_ms(start);
    plan.bundles = bundles
        .iter()
        .map(|b| BundleRow {
            members: b.members.clone(),
            num_queries: b.queries.len(),
            aabb_width: b.aabb_width,
            needs_sphere_test: b.needs_sphere_test,
        })
        .collect();

    let schedule = cfg.opt_level != OptLevel::None;
    let mut stats = PhaseStats::default();
    let mut neighbors: Vec<Vec<u32>> = vec![Vec::new(); queries.len()];
    let mut distances: Option<Vec<Vec<f64>>> = (cfg.mode == SearchMode::Knn).then(|| vec![Vec::new(); queries.len()]);

    for bundle in bundles.iter().filter(|b| !b.queries.is_empty()) {
        let start = Instant::now();
        let bvh = Bvh::build(points, bundle.aabb_width / 2.0)?;
        timings.bvh_ms += elapsed_ms(start);

        let sub: Vec<Point3> = bundle.queries.iter().map(|&i| queries[i as usize]).collect();
        let start = Instant::now();
        let (ordered, perm) = if schedule {
            let hits = first_hit_pass(&bvh, &sub);
            stats.first_search += hits.stats;
            stats.first_search_max_visitor_calls = stats.first_search_max_visitor_calls.max(hits.max_visitor_calls_per_query);
            let perm = reorder_queries(&sub, &hits, points, &scheduling_scene(points, &sub));
            (perm.apply(&sub), Some(perm))
        } else {
            (sub, None)
        };
        timings.first_search_ms += elapsed_ms(start);

        let local = SearchConfig { skip_sphere_test: cfg.skip_sphere_test || !bundle.needs_sphere_test, ..cfg.clone() };
        let start = Instant::now();
        let out = search(&bvh, &ordered, &local);
        timings.search_ms += elapsed_ms(start);
        stats.search += out.stats;

        let (found, dists) = match perm {
            Some(perm) => (perm.restore(out.results.neighbors), out.results.distances.map(|d| perm.restore(d))),
            None => (out.results.neighbors, out.results.distances),
        };
        for (slot, &qi) in bundle.queries.iter().enumerate() {
            neighbors[qi as usize] = found[slot].clone();
        }
        if let (Some(all), Some(d)) = (distances.as_mut(), dists) {
            for (&qi, row) in bundle.queries.iter().zip(d) {
                all[qi as usize] = row;
            }
        }
    }

    let results = ResultSet { neighbors, distances };
    let oracle = opts.check_oracle.then(|| check_against_oracle(cfg, points, queries, &results.neighbors));
    let report = RunReport {
        config: cfg.clone(),
        num_points: points.len(),
        num_queries: queries.len(),
        threads: rayon::current_num_threads(),
        coefficients: opts.coefficients,
        timings,
        stats,
        plan,
        digest: results_digest(cfg.mode, &results.neighbors),
        oracle,
        calibration: None,
    };
    Ok(RunOutput { report, results })
}

/// SHA-256 over the per-query id lists. Range lists are sorted first since
/// which `k` of the in-range points are returned depends on traversal order.
pub fn results_digest(mode: SearchMode, neighbors: &[Vec<u32>]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(match mode {
        SearchMode::Knn => b"knn\0".as_slice(),
        SearchMode::Range => b"range\0".as_slice(),
    });
    hasher.update((neighbors.len() as u64).to_le_bytes());
    for ids in neighbors {
        let mut ids = ids.clone();
        if mode == SearchMode::Range {
            ids.sort_unstable();
        }
        hasher.update((ids.len() as u32).to_le_bytes());
        for id in ids {
            hasher.update(id.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

/// KNN: exact ids and order. Range: every id in range, no duplicates, and
/// `min(k, in range)` of them. Recall counts returned true neighbors against
/// what an exact search would return.
pub fn check_against_oracle(cfg: &SearchConfig, points: &[Point3], queries: &[Point3], got: &[Vec<u32>]) -> OracleCheck {
    let per_query: Vec<(bool, usize, usize)> = queries
        .par_iter()
        .zip(got)
        .map(|(q, ids)| match cfg.mode {
            SearchMode::Knn => {
                let truth = brute_force_knn(points, q, cfg.radius, cfg.k);
                let hits = ids.iter().filter(|id| truth.contains(id)).count();
                (ids == &truth, hits, truth.len())
            }
            SearchMode::Range => {
                let truth = brute_force_range(points, q, cfg.radius);
                let mut sorted = ids.clone();
                sorted.sort_unstable();
                sorted.dedup();
                let hits = sorted.iter().filter(|id| truth.binary_search(id).is_ok()).count();
                let expected = truth.len().min(cfg.k);
                (sorted.len() == ids.len() && hits == ids.len() && ids.len() == expected, hits.min(expected), expected)
            }
        })
        .collect();
    let mismatched_queries = per_query.iter().filter(|(ok, _, _)| !ok).count();
    let hits: usize = per_query.iter().map(|(_, h, _)| h).sum();
    let total: usize = per_query.iter().map(|(_, _, t)| t).sum();
    OracleCheck {
        exact_match: mismatched_queries == 0,
        mismatched_queries,
        recall: if total == 0 { 1.0 } else { hits as f64 / total as f64 },
    }
}
