//! Geometric primitives: points, axis-aligned boxes, rays and Morton codes.
//!
//! Everything here is a plain value type. All predicates use closed bounds,
//! so a point lying exactly on a box face is inside the box.

use serde::{Deserialize, Serialize};

/// A point in 3D scene space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn axis(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    #[inline]
    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Squared Euclidean distance.
    #[inline]
    pub fn dist2(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    /// Chebyshev (L-infinity) distance.
    #[inline]
    pub fn linf_dist(&self, other: &Point3) -> f64 {
        (self.x - other.x)
            .abs()
            .max((self.y - other.y).abs())
            .max((self.z - other.z).abs())
    }

    #[inline]
    fn min_by_axis(&self, other: &Point3) -> Point3 {
        Point3::new(self.x.min(other.x), self.y.min(other.y), self.z.min(other.z))
    }

    #[inline]
    fn max_by_axis(&self, other: &Point3) -> Point3 {
        Point3::new(self.x.max(other.x), self.y.max(other.y), self.z.max(other.z))
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(v: [f64; 3]) -> Self {
        Point3::new(v[0], v[1], v[2])
    }
}

/// Axis-aligned bounding box with closed bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub const fn new(min: Point3, max: Point3) -> Self {
        Self { min, max }
    }

    /// The box that contains nothing; the identity for [`Aabb::union`].
    pub const fn empty() -> Self {
        Self {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    /// Cube of edge `2 * half_width` centered on `center`.
    #[inline]
    pub fn cube(center: Point3, half_width: f64) -> Self {
        Self {
            min: Point3::new(center.x - half_width, center.y - half_width, center.z - half_width),
            max: Point3::new(center.x + half_width, center.y + half_width, center.z + half_width),
        }
    }

    /// Tight bounds of a point set. Returns [`Aabb::empty`] for no points.
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Self {
        points.into_iter().fold(Self::empty(), |b, p| b.grow(p))
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    #[inline]
    pub fn grow(&self, p: &Point3) -> Self {
        Self { min: self.min.min_by_axis(p), max: self.max.max_by_axis(p) }
    }

    #[inline]
    pub fn union(&self, other: &Aabb) -> Self {
        Self { min: self.min.min_by_axis(&other.min), max: self.max.max_by_axis(&other.max) }
    }

    /// Grow every face outward by `margin`.
    #[inline]
    pub fn expand(&self, margin: f64) -> Self {
        Self {
            min: Point3::new(self.min.x - margin, self.min.y - margin, self.min.z - margin),
            max: Point3::new(self.max.x + margin, self.max.y + margin, self.max.z + margin),
        }
    }

    pub fn extent(&self) -> [f64; 3] {
        [self.max.x - self.min.x, self.max.y - self.min.y, self.max.z - self.min.z]
    }

    pub fn center(&self) -> Point3 {
        Point3::new(
            0.5 * (self.min.x + self.max.x),
            0.5 * (self.min.y + self.max.y),
            0.5 * (self.min.z + self.max.z),
        )
    }

    pub fn surface_area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let [dx, dy, dz] = self.extent();
        2.0 * (dx * dy + dy * dz + dz * dx)
    }

    /// Index of the axis with the largest extent.
    pub fn longest_axis(&self) -> usize {
        let [dx, dy, dz] = self.extent();
        if dx >= dy && dx >= dz {
            0
        } else if dy >= dz {
            1
        } else {
            2
        }
    }

    /// Whether `other` lies entirely inside `self`.
    pub fn encloses(&self, other: &Aabb) -> bool {
        self.min.x <= other.min.x
            && self.min.y <= other.min.y
            && self.min.z <= other.min.z
            && self.max.x >= other.max.x
            && self.max.y >= other.max.y
            && self.max.z >= other.max.z
    }

    #[inline]
    pub fn contains(&self, p: &Point3) -> bool {
        aabb_contains(self, p)
    }
}

/// Closed point-in-box test.
#[inline]
pub fn aabb_contains(aabb: &Aabb, p: &Point3) -> bool {
    aabb.min.x <= p.x
        && p.x <= aabb.max.x
        && aabb.min.y <= p.y
        && p.y <= aabb.max.y
        && aabb.min.z <= p.z
        && p.z <= aabb.max.z
}

/// A parametric ray `origin + t * direction` restricted to `t` in `[t_min, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3,
    pub direction: [f64; 3],
    pub t_min: f64,
    pub t_max: f64,
}

impl Ray {
    /// # Panics
    ///
    /// If `t_min` is negative, `t_max <= t_min`, or `direction` is not unit length.
    pub fn new(origin: Point3, direction: [f64; 3], t_min: f64, t_max: f64) -> Self {
        assert!(t_min >= 0.0 && t_max > t_min, "ray interval must satisfy 0 <= t_min < t_max");
        let norm2: f64 = direction.iter().map(|d| d * d).sum();
        assert!((norm2 - 1.0).abs() < 1e-9, "ray direction must be unit length");
        Self { origin, direction, t_min, t_max }
    }

    pub fn at(&self, t: f64) -> Point3 {
        Point3::new(
            self.origin.x + t * self.direction[0],
            self.origin.y + t * self.direction[1],
            self.origin.z + t * self.direction[2],
        )
    }
}

/// Ray/box intersection as seen by the traversal hardware.
///
/// Reports a hit if the slab-test interval overlaps `[t_min, t_max]`, or if
/// the origin is inside the box no matter where along the ray the box lies.
#[inline]
pub fn ray_aabb_intersect(ray: &Ray, aabb: &Aabb) -> bool {
    if aabb_contains(aabb, &ray.origin) {
        return true;
    }
    let o = ray.origin.to_array();
    let lo = aabb.min.to_array();
    let hi = aabb.max.to_array();
    let mut t_near = ray.t_min;
    let mut t_far = ray.t_max;
    for axis in 0..3 {
        let d = ray.direction[axis];
        if d == 0.0 {
            // parallel to the slab: either always inside it or never
            if o[axis] < lo[axis] || o[axis] > hi[axis] {
                return false;
            }
            continue;
        }
        let inv = 1.0 / d;
        let t0 = (lo[axis] - o[axis]) * inv;
        let t1 = (hi[axis] - o[axis]) * inv;
        let (t0, t1) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
        if t_near > t_far {
            return false;
        }
    }
    true
}

/// Z-order key: 21 bits per axis interleaved with x in the lowest position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct MortonCode(pub u64);

pub const MORTON_DEFAULT_BITS: u32 = 21;

/// Spread the low 21 bits of `v` so that bit `i` lands on bit `3i`.
#[inline]
fn spread_bits(v: u64) -> u64 {
    let mut x = v & 0x1f_ffff;
    x = (x | (x << 32)) & 0x001f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x001f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

/// Interleave three already-quantized coordinates.
#[inline]
pub fn morton_interleave(x: u32, y: u32, z: u32) -> MortonCode {
    MortonCode(spread_bits(x as u64) | (spread_bits(y as u64) << 1) | (spread_bits(z as u64) << 2))
}

/// Quantize `p` onto a `2^bits` lattice spanning `scene` and interleave.
///
/// Coordinates outside the scene are clamped. An axis with zero extent
/// quantizes to 0.
///
/// # Panics
///
/// If `bits_per_axis` is not in `1..=21`.
pub fn morton_encode(p: &Point3, scene: &Aabb, bits_per_axis: u32) -> MortonCode {
    assert!((1..=MORTON_DEFAULT_BITS).contains(&bits_per_axis), "bits_per_axis must be in 1..=21");
    let top = ((1u64 << bits_per_axis) - 1) as f64;
    let quantize = |axis: usize| -> u32 {
        let lo = scene.min.axis(axis);
        let extent = scene.max.axis(axis) - lo;
        if !(extent > 0.0) {
            return 0;
        }
        let scale = top / extent;
        let q = ((p.axis(axis) - lo) * scale).floor();
        q.clamp(0.0, top) as u32
    };
    morton_interleave(quantize(0), quantize(1), quantize(2))
}
