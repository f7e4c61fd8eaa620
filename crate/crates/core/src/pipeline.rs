//! Range and KNN search on top of [`Bvh::traverse`].
//!
//! A query is turned into a ray of length 1e-16 along +x starting at the
//! query. Such a ray only hits the leaf cubes that contain its origin, so the
//! visitor sees exactly the points within L-infinity distance `half_width` of
//! the query. The visitor then applies the sphere test and either counts
//! neighbors until `k` (range) or keeps the `k` closest in a bounded heap
//! (KNN).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvh::{Bvh, TraversalStats, Visit};
use crate::error::{Error, Result};
use crate::geom::{Point3, Ray};

/// Parameter length of every query ray.
pub const QUERY_RAY_T_MAX: f64 = 1e-16;
pub const QUERY_RAY_DIRECTION: [f64; 3] = [1.0, 0.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Range,
    Knn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptLevel {
    /// One full-width BVH, queries in input order.
    None,
    /// First-hit pass and Morton reordering.
    Sched,
    /// Scheduling plus per-partition BVHs.
    SchedPart,
    /// Scheduling, partitioning and cost-model bundling.
    SchedPartBundle,
}

/// How KNN partitions turn a megacell width into a leaf cube width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WidthPolicy {
    /// Cube circumscribing the sphere around the megacell; exact results.
    Conservative,
    /// Sphere with the megacell's volume; approximate results.
    EquiVolume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub mode: SearchMode,
    pub radius: f64,
    /// Maximum neighbors per query.
    pub k: usize,
    /// Accept every leaf hit without the distance check.
    pub skip_sphere_test: bool,
    pub opt_level: OptLevel,
    pub policy: WidthPolicy,
    /// Widen range-search partitions so the query-centered cube covers the
    /// whole megacell. Disabling reproduces the plain megacell width.
    pub range_margin: bool,
    /// Grid cell width for partitioning; derived from the data when `None`.
    pub cell_width: Option<f64>,
}

impl SearchConfig {
    pub fn new(mode: SearchMode, radius: f64, k: usize) -> Self {
        Self {
            mode,
            radius,
            k,
            skip_sphere_test: false,
            opt_level: OptLevel::None,
            policy: WidthPolicy::Conservative,
            range_margin: true,
            cell_width: None,
        }
    }

    pub fn knn(radius: f64, k: usize) -> Self {
        Self::new(SearchMode::Knn, radius, k)
    }

    pub fn range(radius: f64, k: usize) -> Self {
        Self::new(SearchMode::Range, radius, k)
    }

    pub fn with_opt_level(mut self, level: OptLevel) -> Self {
        self.opt_level = level;
        self
    }

    pub fn with_policy(mut self, policy: WidthPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::InvalidConfig(format!("radius must be positive and finite, got {}", self.radius)));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if let Some(w) = self.cell_width {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidConfig(format!("cell width must be positive and finite, got {w}")));
            }
        }
        Ok(())
    }

    /// Leaf half width of the unpartitioned index.
    pub fn full_half_width(&self) -> f64 {
        self.radius
    }
}

/// Neighbor lists in query order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultSet {
    /// Range: unordered. KNN: ascending by (distance, id).
    pub neighbors: Vec<Vec<u32>>,
    /// Euclidean distances parallel to `neighbors`; KNN only.
    pub distances: Option<Vec<Vec<f64>>>,
}

impl ResultSet {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchOutput {
    pub results: ResultSet,
    pub stats: TraversalStats,
}

pub fn make_query_ray(q: Point3) -> Ray {
    Ray { origin: q, direction: QUERY_RAY_DIRECTION, t_min: 0.0, t_max: QUERY_RAY_T_MAX }
}

/// Strict squared-distance comparison: a point exactly `r` away is rejected.
#[inline]
pub fn sphere_test(q: &Point3, center: &Point3, r: f64) -> bool {
    q.dist2(center) < r * r
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    id: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Keeps the `k` smallest `(distance², id)` pairs seen so far.
#[derive(Debug, Clone)]
pub struct NeighborHeap {
    capacity: usize,
    heap: BinaryHeap<Candidate>,
}

impl NeighborHeap {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, heap: BinaryHeap::with_capacity(capacity.min(1024)) }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.heap.len() >= self.capacity
    }

    /// Largest retained pair, if any.
    pub fn worst(&self) -> Option<(f64, u32)> {
        self.heap.peek().map(|c| (c.dist2, c.id))
    }

    /// Offer a candidate; returns whether it was kept.
    pub fn offer(&mut self, dist2: f64, id: u32) -> bool {
        let candidate = Candidate { dist2, id };
        if !self.is_full() {
            self.heap.push(candidate);
            return true;
        }
        match self.heap.peek_mut() {
            Some(mut root) if candidate < *root => {
                *root = candidate;
                true
            }
            _ => false,
        }
    }

    /// Retained pairs ascending by (distance², id).
    pub fn into_sorted(self) -> Vec<(f64, u32)> {
        self.heap.into_sorted_vec().into_iter().map(|c| (c.dist2, c.id)).collect()
    }
}

/// One range query. Neighbors are accumulated in visit order and the ray is
/// terminated as soon as `k` have been found.
pub fn range_query(bvh: &Bvh, q: Point3, radius: f64, k: usize, sphere: bool) -> (Vec<u32>, TraversalStats) {
    let mut found = Vec::new();
    let stats = bvh.traverse(&make_query_ray(q), |id, center| {
        if sphere && !sphere_test(&q, center, radius) {
            return Visit::Continue;
        }
        found.push(id);
        if found.len() == k {
            Visit::Terminate
        } else {
            Visit::Continue
        }
    });
    (found, stats)
}

/// One KNN query: the `k` nearest points strictly within `radius`,
/// ascending by (distance², id).
pub fn knn_query(bvh: &Bvh, q: Point3, radius: f64, k: usize) -> (Vec<(f64, u32)>, TraversalStats) {
    let r2 = radius * radius;
    let mut heap = NeighborHeap::new(k);
    let stats = bvh.traverse(&make_query_ray(q), |id, center| {
        let d2 = q.dist2(center);
        if d2 < r2 {
            heap.offer(d2, id);
        }
        Visit::Continue
    });
    (heap.into_sorted(), stats)
}

pub fn range_search(bvh: &Bvh, queries: &[Point3], cfg: &SearchConfig) -> SearchOutput {
    let sphere = !cfg.skip_sphere_test;
    let per_query: Vec<(Vec<u32>, TraversalStats)> =
        queries.par_iter().map(|&q| range_query(bvh, q, cfg.radius, cfg.k, sphere)).collect();
    let stats = per_query.iter().map(|(_, s)| *s).sum();
    let neighbors = per_query.into_iter().map(|(n, _)| n).collect();
    SearchOutput { results: ResultSet { neighbors, distances: None }, stats }
}

pub fn knn_search(bvh: &Bvh, queries: &[Point3], cfg: &SearchConfig) -> SearchOutput {
    let per_query: Vec<(Vec<(f64, u32)>, TraversalStats)> =
        queries.par_iter().map(|&q| knn_query(bvh, q, cfg.radius, cfg.k)).collect();
    let stats = per_query.iter().map(|(_, s)| *s).sum();
    let mut neighbors = Vec::with_capacity(per_query.len());
    let mut distances = Vec::with_capacity(per_query.len());
    for (list, _) in per_query {
        neighbors.push(list.iter().map(|&(_, id)| id).collect());
        distances.push(list.iter().map(|&(d2, _)| d2.sqrt()).collect());
    }
    SearchOutput { results: ResultSet { neighbors, distances: Some(distances) }, stats }
}

/// Dispatch on `cfg.mode`.
pub fn search(bvh: &Bvh, queries: &[Point3], cfg: &SearchConfig) -> SearchOutput {
    match cfg.mode {
        SearchMode::Range => range_search(bvh, queries, cfg),
        SearchMode::Knn => knn_search(bvh, queries, cfg),
    }
}
