//! Bounding volume hierarchy over per-point cubes.
//!
//! Every input point becomes a leaf cube of edge `2 * half_width` centered on
//! the point. The tree is built top-down with a binned surface area heuristic
//! and traversed with an explicit stack. Traversal reports every leaf cube the
//! ray intersects to a caller-supplied visitor, which may stop the ray early.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{ray_aabb_intersect, Aabb, Point3, Ray};

/// Maximum number of points stored in one leaf node.
pub const MAX_LEAF_SIZE: usize = 4;
const SAH_BINS: usize = 16;
const TRAVERSAL_COST: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Interior { left: u32, right: u32 },
    /// Range into [`Bvh::leaf_point_ids`].
    Leaf { begin: u32, end: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvhNode {
    pub bounds: Aabb,
    pub kind: NodeKind,
}

/// What the visitor wants the traversal to do next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visit {
    Continue,
    Terminate,
}

/// Work counters for one or more traversals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TraversalStats {
    /// Tree nodes popped from the traversal stack.
    pub nodes_visited: u64,
    /// Ray/box tests performed, interior and leaf.
    pub aabb_tests: u64,
    /// Leaf cubes found to intersect the ray.
    pub leaf_tests: u64,
    pub visitor_calls: u64,
}

impl AddAssign for TraversalStats {
    fn add_assign(&mut self, rhs: Self) {
        self.nodes_visited += rhs.nodes_visited;
        self.aabb_tests += rhs.aabb_tests;
        self.leaf_tests += rhs.leaf_tests;
        self.visitor_calls += rhs.visitor_calls;
    }
}

impl Add for TraversalStats {
    type Output = Self;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl std::iter::Sum for TraversalStats {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    leaf_point_ids: Vec<u32>,
    /// Point centers in leaf order, parallel to `leaf_point_ids`.
    leaf_points: Vec<Point3>,
    half_width: f64,
    depth: usize,
}

#[derive(Clone, Copy)]
struct Bin {
    count: usize,
    bounds: Aabb,
}

impl Bvh {
    /// Build over `points` with cubic leaves of half edge `half_width`.
    pub fn build(points: &[Point3], half_width: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if let Some(index) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidPoint { index });
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidConfig(format!("half_width must be positive and finite, got {half_width}")));
        }
        if points.len() > u32::MAX as usize {
            return Err(Error::InvalidConfig("too many points for 32-bit ids".into()));
        }

        let mut ids: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes: Vec<BvhNode> = Vec::with_capacity(2 * points.len() / MAX_LEAF_SIZE + 1);
        let placeholder = BvhNode { bounds: Aabb::empty(), kind: NodeKind::Leaf { begin: 0, end: 0 } };
        nodes.push(placeholder);
        let mut depth = 0;

        // (node index, begin, end, depth)
        let mut work = vec![(0usize, 0usize, points.len(), 1usize)];
        while let Some((node, begin, end, level)) = work.pop() {
            depth = depth.max(level);
            let slice = &mut ids[begin..end];
            let centroids = Aabb::from_points(slice.iter().map(|&i| &points[i as usize]));
            let bounds = centroids.expand(half_width);

            let split = choose_split(points, slice, &centroids, half_width);
            let mid = match split {
                Some(Split::Sah { axis, bin }) => {
                    let lo = centroids.min.axis(axis);
                    let scale = SAH_BINS as f64 / (centroids.max.axis(axis) - lo);
                    begin + partition_in_place(slice, |&i| bin_index(points[i as usize].axis(axis), lo, scale) < bin)
                }
                Some(Split::Median) => begin + slice.len() / 2,
                None => {
                    nodes[node] = BvhNode { bounds, kind: NodeKind::Leaf { begin: begin as u32, end: end as u32 } };
                    continue;
                }
            };

            let left = nodes.len();
            nodes.push(placeholder);
            nodes.push(placeholder);
            nodes[node] = BvhNode { bounds, kind: NodeKind::Interior { left: left as u32, right: left as u32 + 1 } };
            work.push((left + 1, mid, end, level + 1));
            work.push((left, begin, mid, level + 1));
        }

        let leaf_points = ids.iter().map(|&i| points[i as usize]).collect();
        Ok(Self { nodes, leaf_point_ids: ids, leaf_points, half_width, depth })
    }

    pub fn nodes(&self) -> &[BvhNode] {
        &self.nodes
    }

    pub fn leaf_point_ids(&self) -> &[u32] {
        &self.leaf_point_ids
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Number of leaf cubes, one per indexed point.
    pub fn num_leaf_aabbs(&self) -> usize {
        self.leaf_point_ids.len()
    }

    /// Number of levels from the root to the deepest leaf, inclusive.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn root_bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    /// Cast `ray` through the tree, calling `visitor(point_id, center)` once for
    /// every leaf cube the ray intersects. Order is unspecified.
    pub fn traverse<F>(&self, ray: &Ray, mut visitor: F) -> TraversalStats
    where
        F: FnMut(u32, &Point3) -> Visit,
    {
        let mut stats = TraversalStats::default();
        let mut stack: Vec<u32> = Vec::with_capacity(self.depth + 1);
        stack.push(0);
        while let Some(index) = stack.pop() {
            let node = &self.nodes[index as usize];
            stats.nodes_visited += 1;
            stats.aabb_tests += 1;
            if !ray_aabb_intersect(ray, &node.bounds) {
                continue;
            }
            match node.kind {
                NodeKind::Interior { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
                NodeKind::Leaf { begin, end } => {
                    for slot in begin as usize..end as usize {
                        let center = &self.leaf_points[slot];
                        stats.aabb_tests += 1;
                        if !ray_aabb_intersect(ray, &Aabb::cube(*center, self.half_width)) {
                            continue;
                        }
                        stats.leaf_tests += 1;
                        stats.visitor_calls += 1;
                        if visitor(self.leaf_point_ids[slot], center) == Visit::Terminate {
                            return stats;
                        }
                    }
                }
            }
        }
        stats
    }

    /// Check the structural invariants: every node reachable exactly once,
    /// parents enclose children, leaves enclose their point cubes, and the
    /// leaf ranges partition a permutation of the point ids.
    pub fn validate(&self) -> bool {
        let n = self.leaf_point_ids.len();
        if self.nodes.is_empty()
            || n == 0
            || self.leaf_points.len() != n
            || !(self.half_width > 0.0 && self.half_width.is_finite())
        {
            return false;
        }

        let mut seen_id = vec![false; n];
        for &id in &self.leaf_point_ids {
            match seen_id.get_mut(id as usize) {
                Some(seen) if !*seen => *seen = true,
                _ => return false,
            }
        }

        let mut reached = vec![false; self.nodes.len()];
        let mut covered = vec![false; n];
        let mut stack = vec![0usize];
        while let Some(index) = stack.pop() {
            if std::mem::replace(&mut reached[index], true) {
                return false;
            }
            let node = &self.nodes[index];
            match node.kind {
                NodeKind::Interior { left, right } => {
                    for child in [left as usize, right as usize] {
                        if child >= self.nodes.len() || !node.bounds.encloses(&self.nodes[child].bounds) {
                            return false;
                        }
                        stack.push(child);
                    }
                }
                NodeKind::Leaf { begin, end } => {
                    let (begin, end) = (begin as usize, end as usize);
                    if begin >= end || end > n {
                        return false;
                    }
                    for slot in begin..end {
                        if std::mem::replace(&mut covered[slot], true) {
                            return false;
                        }
                        let cube = Aabb::cube(self.leaf_points[slot], self.half_width);
                        if !node.bounds.encloses(&cube) {
                            return false;
                        }
                    }
                }
            }
        }
        reached.iter().all(|&r| r) && covered.iter().all(|&c| c)
    }

    #[cfg(test)]
    pub(crate) fn nodes_mut(&mut self) -> &mut Vec<BvhNode> {
        &mut self.nodes
    }

    #[cfg(test)]
    pub(crate) fn leaf_point_ids_mut(&mut self) -> &mut Vec<u32> {
        &mut self.leaf_point_ids
    }
}

/// Free-function form of [`Bvh::build`].
pub fn build_bvh(points: &[Point3], half_width: f64) -> Result<Bvh> {
    Bvh::build(points, half_width)
}

/// Free-function form of [`Bvh::validate`].
pub fn validate_bvh(bvh: &Bvh) -> bool {
    bvh.validate()
}

enum Split {
    /// Points whose bin on `axis` is below `bin` go left.
    Sah { axis: usize, bin: usize },
    /// All centroids coincide; halve the range.
    Median,
}

#[inline]
fn bin_index(c: f64, lo: f64, scale: f64) -> usize {
    (((c - lo) * scale) as usize).min(SAH_BINS - 1)
}

fn choose_split(points: &[Point3], ids: &[u32], centroids: &Aabb, half_width: f64) -> Option<Split> {
    let n = ids.len();
    if n <= 1 {
        return None;
    }
    let axis = centroids.longest_axis();
    let lo = centroids.min.axis(axis);
    let extent = centroids.max.axis(axis) - lo;
    if !(extent > 0.0) {
        return (n > MAX_LEAF_SIZE).then_some(Split::Median);
    }

    let scale = SAH_BINS as f64 / extent;
    let mut bins = [Bin { count: 0, bounds: Aabb::empty() }; SAH_BINS];
    for &i in ids {
        let p = &points[i as usize];
        let b = &mut bins[bin_index(p.axis(axis), lo, scale)];
        b.count += 1;
        b.bounds = b.bounds.grow(p);
    }

    // right_area[k] / right_count[k] describe bins k..SAH_BINS
    let mut right_area = [0.0; SAH_BINS];
    let mut right_count = [0usize; SAH_BINS];
    let mut acc = Aabb::empty();
    let mut count = 0;
    for k in (1..SAH_BINS).rev() {
        acc = acc.union(&bins[k].bounds);
        count += bins[k].count;
        right_area[k] = if count > 0 { acc.expand(half_width).surface_area() } else { 0.0 };
        right_count[k] = count;
    }

    let parent_area = centroids.expand(half_width).surface_area();
    let mut best: Option<(f64, usize)> = None;
    let mut acc = Aabb::empty();
    let mut count = 0;
    for k in 1..SAH_BINS {
        acc = acc.union(&bins[k - 1].bounds);
        count += bins[k - 1].count;
        if count == 0 || right_count[k] == 0 {
            continue;
        }
        let left_area = acc.expand(half_width).surface_area();
        let cost = TRAVERSAL_COST
            + (left_area * count as f64 + right_area[k] * right_count[k] as f64) / parent_area;
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, k));
        }
    }

    let (cost, bin) = best?;
    if n <= MAX_LEAF_SIZE && cost >= n as f64 {
        return None;
    }
    Some(Split::Sah { axis, bin })
}

/// Reorder `items` so that those satisfying `pred` come first; returns their count.
fn partition_in_place<T, F: Fn(&T) -> bool>(items: &mut [T], pred: F) -> usize {
    let mut first = 0;
    for i in 0..items.len() {
        if pred(&items[i]) {
            items.swap(first, i);
            first += 1;
        }
    }
    first
}
