//! Cost model and partition bundling.
//!
//! Every partition costs one BVH build over all points. Merging partitions
//! saves builds but forces the merged set onto the widest member's leaf
//! cubes. Total cost is `Σ builds + Σ searches`; the planner only considers
//! plans where the `M_o - 1` partitions with the most queries stay alone and
//! the rest share one bundle, and scans `M_o` from 1 to `M`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{PartitionSummary, QueryPartition};
use crate::pipeline::SearchMode;

/// Bundling is known to over-merge from here on.
pub const LARGE_K: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCoefficients {
    /// Build cost per leaf AABB.
    pub k1: f64,
    /// KNN visitor cost unit.
    pub k2: f64,
    /// Range visitor cost per neighbor, sphere test skipped.
    pub k3_skip: f64,
    /// Range visitor cost per neighbor, sphere test performed.
    pub k3_test: f64,
}

impl Default for CostCoefficients {
    /// Published ratios: k1:k2 = 1:15000, k1:k3 = 20:1 (skip) and 2:1 (test).
    fn default() -> Self {
        Self { k1: 1.0, k2: 15_000.0, k3_skip: 0.05, k3_test: 0.5 }
    }
}

impl CostCoefficients {
    pub fn validate(&self) -> Result<()> {
        let all = [self.k1, self.k2, self.k3_skip, self.k3_test];
        if all.iter().all(|c| c.is_finite() && *c > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("cost coefficients must be positive, got {self:?}")))
        }
    }
}

pub fn estimate_build_cost(num_aabbs: usize, c: &CostCoefficients) -> f64 {
    assert!(num_aabbs >= 1, "a BVH needs at least one AABB");
    c.k1 * num_aabbs as f64
}

/// `k2 · Σ Nᵢρᵢ · max(S)³` over the members searched with one BVH.
pub fn estimate_search_cost_knn(members: &[PartitionSummary], c: &CostCoefficients) -> f64 {
    let weight: f64 = members.iter().map(|p| p.num_queries as f64 * p.density).sum();
    let width = members.iter().map(|p| p.aabb_width).fold(0.0, f64::max);
    c.k2 * weight * width.powi(3)
}

/// `k3 · Σ Nᵢ · K`, with the sphere-test rate if any member needs it.
pub fn estimate_search_cost_range(members: &[PartitionSummary], k: usize, c: &CostCoefficients) -> f64 {
    let k3 = if members.iter().any(|p| p.needs_sphere_test) { c.k3_test } else { c.k3_skip };
    let n: usize = members.iter().map(|p| p.num_queries).sum();
    k3 * n as f64 * k as f64
}

/// What the cost model needs besides the partitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub mode: SearchMode,
    pub k: usize,
    pub num_points: usize,
    pub coefficients: CostCoefficients,
}

impl CostModel {
    pub fn search_cost(&self, members: &[PartitionSummary]) -> f64 {
        match self.mode {
            SearchMode::Knn => estimate_search_cost_knn(members, &self.coefficients),
            SearchMode::Range => estimate_search_cost_range(members, self.k, &self.coefficients),
        }
    }

    /// One build plus the merged search.
    pub fn bundle_cost(&self, members: &[PartitionSummary]) -> f64 {
        estimate_build_cost(self.num_points, &self.coefficients) + self.search_cost(members)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BundlingPlan {
    /// Partition indices by descending query count.
    pub order: Vec<usize>,
    /// Chosen number of bundles `M_o`.
    pub num_bundles: usize,
    pub estimated_cost: f64,
    /// Cost of the tail-merge plan for `M_o = 1..=M`.
    pub costs: Vec<f64>,
    /// Query count strictly falls while width strictly grows along `order`.
    pub assumption_held: bool,
    pub large_k: bool,
}

impl BundlingPlan {
    pub fn evaluations(&self) -> usize {
        self.costs.len()
    }

    /// Member partitions of each bundle: standalone ones first, the merged
    /// tail last.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let solo = self.num_bundles - 1;
        let mut groups: Vec<Vec<usize>> = self.order[..solo].iter().map(|&i| vec![i]).collect();
        groups.push(self.order[solo..].to_vec());
        groups
    }
}

pub fn optimal_bundling(partitions: &[PartitionSummary], model: &CostModel) -> BundlingPlan {
    assert!(!partitions.is_empty(), "nothing to bundle");
    let mut order: Vec<usize> = (0..partitions.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&partitions[a], &partitions[b]);
        pb.num_queries.cmp(&pa.num_queries).then(pa.aabb_width.total_cmp(&pb.aabb_width)).then(a.cmp(&b))
    });
    let sorted: Vec<PartitionSummary> = order.iter().map(|&i| partitions[i]).collect();
    let m = sorted.len();

    // suffix-merged search cost for each split point
    let costs: Vec<f64> = (1..=m)
        .map(|m_o| {
            let solo = m_o - 1;
            let standalone: f64 = sorted[..solo].iter().map(|p| model.bundle_cost(std::slice::from_ref(p))).sum();
            standalone + model.bundle_cost(&sorted[solo..])
        })
        .collect();
    let (best, &estimated_cost) = costs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .expect("at least one partition");

    let assumption_held =
        sorted.windows(2).all(|w| w[0].num_queries > w[1].num_queries && w[0].aabb_width < w[1].aabb_width);
    BundlingPlan {
        order,
        num_bundles: best + 1,
        estimated_cost,
        costs,
        assumption_held,
        large_k: model.k >= LARGE_K,
    }
}

/// Queries that share one BVH.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    /// Indices of the member partitions.
    pub members: Vec<usize>,
    pub aabb_width: f64,
    pub needs_sphere_test: bool,
    /// Original query indices, ascending.
    pub queries: Vec<u32>,
}

pub fn apply_bundling(partitions: &[QueryPartition], plan: &BundlingPlan) -> Vec<Bundle> {
    assert_eq!(partitions.len(), plan.order.len(), "plan was made for other partitions");
    plan.groups()
        .into_iter()
        .map(|members| {
            let mut queries: Vec<u32> = members.iter().flat_map(|&i| partitions[i].queries.iter().copied()).collect();
            queries.sort_unstable();
            Bundle {
                aabb_width: members.iter().map(|&i| partitions[i].aabb_width).fold(0.0, f64::max),
                needs_sphere_test: members.iter().any(|&i| partitions[i].needs_sphere_test),
                members,
                queries,
            }
        })
        .collect()
}

/// One bundle per partition, no merging.
pub fn unbundled(partitions: &[QueryPartition]) -> Vec<Bundle> {
    partitions
        .iter()
        .enumerate()
        .map(|(i, p)| Bundle {
            members: vec![i],
            aabb_width: p.aabb_width,
            needs_sphere_test: p.needs_sphere_test,
            queries: p.queries.clone(),
        })
        .collect()
}
