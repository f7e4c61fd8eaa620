//! Spatially ordered query scheduling.
//!
//! A truncated search stops every query ray at its first leaf hit, which
//! tags the query with one enclosing leaf cube. Queries sharing a tag are
//! neighbors in space, so they are grouped, and groups are ordered along the
//! Z-curve by the Morton code of the tagged point.

use rayon::prelude::*;

use crate::bvh::{Bvh, TraversalStats, Visit};
use crate::geom::{morton_encode, Aabb, Point3, MORTON_DEFAULT_BITS};
use crate::pipeline::make_query_ray;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FirstHitAssignment {
    /// Point id of the first leaf cube hit by each query, if any.
    pub first_hit: Vec<Option<u32>>,
    pub stats: TraversalStats,
    /// Largest visitor call count observed for a single query.
    pub max_visitor_calls_per_query: u64,
}

impl FirstHitAssignment {
    pub fn num_assigned(&self) -> usize {
        self.first_hit.iter().filter(|h| h.is_some()).count()
    }
}

/// Cast every query and stop at the first leaf hit.
pub fn first_hit_pass(bvh: &Bvh, queries: &[Point3]) -> FirstHitAssignment {
    let per_query: Vec<(Option<u32>, TraversalStats)> = queries
        .par_iter()
        .map(|&q| {
            let mut hit = None;
            let stats = bvh.traverse(&make_query_ray(q), |id, _| {
                hit = Some(id);
                Visit::Terminate
            });
            (hit, stats)
        })
        .collect();
    let stats = per_query.iter().map(|(_, s)| *s).sum();
    let max_visitor_calls_per_query = per_query.iter().map(|(_, s)| s.visitor_calls).max().unwrap_or(0);
    FirstHitAssignment { first_hit: per_query.into_iter().map(|(h, _)| h).collect(), stats, max_visitor_calls_per_query }
}

/// A bijection on query indices. `order[slot]` is the original index of the
/// query executed in `slot`; `inverse[original]` is its slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryPermutation {
    order: Vec<u32>,
    inverse: Vec<u32>,
}

impl QueryPermutation {
    pub fn identity(n: usize) -> Self {
        let order: Vec<u32> = (0..n as u32).collect();
        Self { inverse: order.clone(), order }
    }

    /// Returns `None` unless `order` is a permutation of `0..order.len()`.
    pub fn from_order(order: Vec<u32>) -> Option<Self> {
        let mut inverse = vec![u32::MAX; order.len()];
        for (slot, &original) in order.iter().enumerate() {
            let entry = inverse.get_mut(original as usize)?;
            if *entry != u32::MAX {
                return None;
            }
            *entry = slot as u32;
        }
        Some(Self { order, inverse })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[u32] {
        &self.order
    }

    pub fn inverse(&self) -> &[u32] {
        &self.inverse
    }

    /// Items in execution order.
    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        self.order.iter().map(|&i| items[i as usize].clone()).collect()
    }

    /// Undo [`apply`](Self::apply): map execution-order items back to input order.
    pub fn restore<T>(&self, items: Vec<T>) -> Vec<T> {
        assert_eq!(items.len(), self.order.len(), "length mismatch");
        let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
        self.inverse.iter().map(|&slot| slots[slot as usize].take().expect("valid permutation")).collect()
    }
}

/// Smallest box containing both point sets; the Morton lattice spans it.
pub fn scheduling_scene(points: &[Point3], queries: &[Point3]) -> Aabb {
    Aabb::from_points(points.iter().chain(queries))
}

/// Group queries by first-hit id and order the groups along the Z-curve.
///
/// Within a group the input order is kept. Queries without a hit go last,
/// ordered by the Morton code of their own position.
pub fn reorder_queries(
    queries: &[Point3],
    assignment: &FirstHitAssignment,
    points: &[Point3],
    scene: &Aabb,
) -> QueryPermutation {
    assert_eq!(queries.len(), assignment.first_hit.len(), "assignment does not match queries");
    // (unassigned, morton, group id, original index) is unique per query
    let mut keys: Vec<(bool, u64, u32, u32)> = queries
        .par_iter()
        .zip(&assignment.first_hit)
        .enumerate()
        .map(|(i, (q, hit))| match hit {
            Some(id) => (false, morton_encode(&points[*id as usize], scene, MORTON_DEFAULT_BITS).0, *id, i as u32),
            None => (true, morton_encode(q, scene, MORTON_DEFAULT_BITS).0, 0, i as u32),
        })
        .collect();
    keys.par_sort_unstable();
    let order = keys.into_iter().map(|k| k.3).collect();
    QueryPermutation::from_order(order).expect("keys carry each index once")
}
