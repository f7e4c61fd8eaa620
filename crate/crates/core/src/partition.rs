//! Query partitioning by local density.
//!
//! A uniform grid counts points per cell. For each query a megacell is grown
//! symmetrically around the query's cell, one layer per step, until it holds
//! at least `k` points or the next layer would leave the cube inscribed in
//! the query's search sphere. The megacell width then bounds how wide the
//! leaf cubes have to be for that query, and queries with the same number of
//! growth steps share one partition (and one BVH).

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Point3};
use crate::pipeline::{SearchConfig, SearchMode, WidthPolicy};

/// Upper bound on dense grid cells; cell width grows to respect it.
pub const MAX_GRID_CELLS: usize = 1 << 26;

/// Relative slack on conservative KNN widths to absorb rounding in cell
/// assignment.
const CONSERVATIVE_SLACK: f64 = 1e-9;

/// Edge of a cube whose volume equals that of a sphere of diameter 1, inverted:
/// the sphere diameter with the same volume as a unit cube.
pub fn equi_volume_factor() -> f64 {
    2.0 * (3.0 / (4.0 * std::f64::consts::PI)).cbrt()
}

#[derive(Debug, Clone)]
pub struct Grid {
    /// Tight bounds of the indexed points.
    scene: Aabb,
    cell_width: f64,
    dims: [usize; 3],
    counts: Vec<u32>,
    /// Inclusive 3D prefix sums with a zero border, `(dims + 1)` per axis.
    prefix: Vec<u64>,
    total: u64,
}

impl Grid {
    pub fn build(points: &[Point3], cell_width: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if let Some(index) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidPoint { index });
        }
        if !(cell_width.is_finite() && cell_width > 0.0) {
            return Err(Error::InvalidConfig(format!("cell width must be positive and finite, got {cell_width}")));
        }
        let scene = Aabb::from_points(points);
        let extent = scene.extent();
        let dims_for = |w: f64| extent.map(|e| ((e / w).ceil() as usize).max(1));
        let mut cell_width = cell_width;
        let mut dims = dims_for(cell_width);
        while dims.iter().product::<usize>() > MAX_GRID_CELLS {
            let excess = dims.iter().product::<usize>() as f64 / MAX_GRID_CELLS as f64;
            cell_width *= excess.cbrt().max(1.01);
            dims = dims_for(cell_width);
        }

        let num_cells = dims.iter().product::<usize>();
        let counts: Vec<AtomicU32> = (0..num_cells).map(|_| AtomicU32::new(0)).collect();
        let mut grid = Self { scene, cell_width, dims, counts: Vec::new(), prefix: Vec::new(), total: 0 };
        points.par_iter().for_each(|p| {
            counts[grid.linear(grid.cell_of(p))].fetch_add(1, Ordering::Relaxed);
        });
        grid.counts = counts.into_iter().map(AtomicU32::into_inner).collect();
        grid.total = points.len() as u64;
        grid.build_prefix();
        Ok(grid)
    }

    fn build_prefix(&mut self) {
        let [dx, dy, dz] = self.dims;
        let (px, py) = (dx + 1, dy + 1);
        let mut prefix = vec![0u64; px * py * (dz + 1)];
        let at = |x: usize, y: usize, z: usize| x + px * (y + py * z);
        for z in 1..=dz {
            for y in 1..=dy {
                for x in 1..=dx {
                    let c = self.counts[self.linear([x - 1, y - 1, z - 1])] as u64;
                    let pos = c
                        + prefix[at(x - 1, y, z)]
                        + prefix[at(x, y - 1, z)]
                        + prefix[at(x, y, z - 1)]
                        + prefix[at(x - 1, y - 1, z - 1)];
                    let neg = prefix[at(x - 1, y - 1, z)] + prefix[at(x - 1, y, z - 1)] + prefix[at(x, y - 1, z - 1)];
                    prefix[at(x, y, z)] = pos - neg;
                }
            }
        }
        self.prefix = prefix;
    }

    #[inline]
    fn linear(&self, [x, y, z]: [usize; 3]) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn scene(&self) -> &Aabb {
        &self.scene
    }

    /// Effective cell width; larger than requested if the cell cap applied.
    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Cell containing `p`, clamped into the grid.
    pub fn cell_of(&self, p: &Point3) -> [usize; 3] {
        let mut cell = [0; 3];
        for (axis, c) in cell.iter_mut().enumerate() {
            let t = ((p.axis(axis) - self.scene.min.axis(axis)) / self.cell_width).floor();
            *c = (t.max(0.0) as usize).min(self.dims[axis] - 1);
        }
        cell
    }

    pub fn count(&self, cell: [usize; 3]) -> u32 {
        self.counts[self.linear(cell)]
    }

    /// Points in the block of cells `lo..=hi`.
    pub fn count_block(&self, lo: [usize; 3], hi: [usize; 3]) -> u64 {
        let (px, py) = (self.dims[0] + 1, self.dims[1] + 1);
        let at = |x: usize, y: usize, z: usize| self.prefix[x + px * (y + py * z)];
        let [x0, y0, z0] = lo;
        let [x1, y1, z1] = hi.map(|v| v + 1);
        let pos = at(x1, y1, z1) + at(x0, y0, z1) + at(x0, y1, z0) + at(x1, y0, z0);
        let neg = at(x0, y1, z1) + at(x1, y0, z1) + at(x1, y1, z0) + at(x0, y0, z0);
        pos - neg
    }

    /// Lower corner of `cell` in scene coordinates.
    fn cell_min(&self, axis: usize, index: usize) -> f64 {
        self.scene.min.axis(axis) + index as f64 * self.cell_width
    }
}

pub fn build_grid(points: &[Point3], cell_width: f64) -> Result<Grid> {
    Grid::build(points, cell_width)
}

/// About one point per cell, clamped to `[r/16, 2r/√3]`.
pub fn default_cell_width(points: &[Point3], radius: f64) -> f64 {
    let scene = Aabb::from_points(points);
    let n = points.len().max(1) as f64;
    let live: Vec<f64> = scene.extent().into_iter().filter(|e| *e > 0.0).collect();
    let natural = if live.is_empty() {
        radius
    } else {
        (live.iter().product::<f64>() / n).powf(1.0 / live.len() as f64)
    };
    natural.clamp(radius / 16.0, 2.0 * radius / 3f64.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MegacellResult {
    /// Growth layers added around the query's cell.
    pub steps: u32,
    /// Unclipped megacell edge, `(2 * steps + 1) * cell_width`.
    pub width: f64,
    /// Edge of the smallest query-centered cube containing the megacell
    /// (clipped to the point bounds).
    pub extent: f64,
    /// Points counted in the megacell.
    pub count: u64,
    /// At least `k` points were found inside the inscribed cube.
    pub satisfied: bool,
    /// Growth stopped at the inscribed-cube bound.
    pub capped: bool,
}

/// Grow a megacell around `q` until it holds `k` points or would leave the
/// cube inscribed in the radius-`r` sphere around `q`.
pub fn grow_megacell(grid: &Grid, q: &Point3, r: f64, k: usize) -> MegacellResult {
    let center = grid.cell_of(q);
    let half_limit = r / 3f64.sqrt();
    let mut last: Option<MegacellResult> = None;
    let mut steps = 0usize;
    loop {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut half_extent = 0.0f64;
        for axis in 0..3 {
            lo[axis] = center[axis].saturating_sub(steps);
            hi[axis] = (center[axis] + steps).min(grid.dims[axis] - 1);
            let a = grid.cell_min(axis, lo[axis]).max(grid.scene.min.axis(axis));
            let b = grid.cell_min(axis, hi[axis] + 1).min(grid.scene.max.axis(axis));
            let qa = q.axis(axis);
            half_extent = half_extent.max((qa - a).abs()).max((b - qa).abs());
        }
        if half_extent > half_limit {
            return match last {
                Some(prev) => MegacellResult { capped: true, ..prev },
                None => MegacellResult {
                    steps: 0,
                    width: grid.cell_width,
                    extent: 2.0 * half_extent,
                    count: 0,
                    satisfied: false,
                    capped: true,
                },
            };
        }
        let count = grid.count_block(lo, hi);
        let current = MegacellResult {
            steps: steps as u32,
            width: (2 * steps + 1) as f64 * grid.cell_width,
            extent: 2.0 * half_extent,
            count,
            satisfied: count >= k as u64,
            capped: false,
        };
        let covers_grid = (0..3).all(|a| lo[a] == 0 && hi[a] == grid.dims[a] - 1);
        if current.satisfied || covers_grid {
            return current;
        }
        last = Some(current);
        steps += 1;
    }
}

/// Everything that decides a leaf width besides the megacell itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthRule {
    pub mode: SearchMode,
    pub policy: WidthPolicy,
    pub radius: f64,
    pub range_margin: bool,
}

impl From<&SearchConfig> for WidthRule {
    fn from(cfg: &SearchConfig) -> Self {
        Self { mode: cfg.mode, policy: cfg.policy, radius: cfg.radius, range_margin: cfg.range_margin }
    }
}

/// Leaf cube width `S` for a query and whether its hits still need the
/// sphere test.
pub fn aabb_width_for(mc: &MegacellResult, rule: &WidthRule) -> (f64, bool) {
    let full = 2.0 * rule.radius;
    if !mc.satisfied {
        return (full, true);
    }
    match rule.mode {
        SearchMode::Range => {
            let inscribed = full / 3f64.sqrt();
            let width = if rule.range_margin { mc.extent } else { mc.width };
            (width.min(inscribed), false)
        }
        SearchMode::Knn => {
            let width = match rule.policy {
                WidthPolicy::Conservative => 3f64.sqrt() * mc.extent * (1.0 + CONSERVATIVE_SLACK),
                WidthPolicy::EquiVolume => equi_volume_factor() * mc.width,
            };
            (width.min(full), true)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKey {
    /// Megacell reached `k` points after this many growth steps.
    Steps(u32),
    /// Megacell never reached `k` points; full `2r` width with sphere test.
    FullWidth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryPartition {
    pub key: PartitionKey,
    /// Leaf cube edge `S` shared by the partition's BVH.
    pub aabb_width: f64,
    /// Megacell edge `C`.
    pub megacell_width: f64,
    /// Original query indices, ascending.
    pub queries: Vec<u32>,
    /// Estimated point density `k / C³`.
    pub density: f64,
    pub needs_sphere_test: bool,
}

/// The numbers the cost model needs from a partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub num_queries: usize,
    pub aabb_width: f64,
    pub megacell_width: f64,
    pub density: f64,
    pub needs_sphere_test: bool,
}

impl QueryPartition {
    pub fn summary(&self) -> PartitionSummary {
        PartitionSummary {
            num_queries: self.queries.len(),
            aabb_width: self.aabb_width,
            megacell_width: self.megacell_width,
            density: self.density,
            needs_sphere_test: self.needs_sphere_test,
        }
    }
}

/// Split queries by megacell growth steps. Partitions come back ordered by
/// key: fewest steps first, the full-width fallback last.
pub fn partition_queries(queries: &[Point3], grid: &Grid, cfg: &SearchConfig) -> Vec<QueryPartition> {
    let rule = WidthRule::from(cfg);
    let per_query: Vec<(PartitionKey, f64, bool)> = queries
        .par_iter()
        .map(|q| {
            let mc = grow_megacell(grid, q, cfg.radius, cfg.k);
            let (width, sphere) = aabb_width_for(&mc, &rule);
            let key = if mc.satisfied { PartitionKey::Steps(mc.steps) } else { PartitionKey::FullWidth };
            (key, width, sphere)
        })
        .collect();

    let mut groups: BTreeMap<PartitionKey, QueryPartition> = BTreeMap::new();
    for (i, (key, width, sphere)) in per_query.into_iter().enumerate() {
        let part = groups.entry(key).or_insert_with(|| {
            let megacell_width = match key {
                PartitionKey::Steps(s) => (2 * s + 1) as f64 * grid.cell_width(),
                PartitionKey::FullWidth => 2.0 * cfg.radius / 3f64.sqrt(),
            };
            QueryPartition {
                key,
                aabb_width: 0.0,
                megacell_width,
                queries: Vec::new(),
                density: cfg.k as f64 / megacell_width.powi(3),
                needs_sphere_test: false,
            }
        });
        part.aabb_width = part.aabb_width.max(width);
        part.needs_sphere_test |= sphere;
        part.queries.push(i as u32);
    }
    groups.into_values().collect()
}
