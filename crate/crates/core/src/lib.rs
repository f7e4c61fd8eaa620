//! Neighbor search as BVH ray casting.
//!
//! Each data point is wrapped in a cube whose half edge is the search radius
//! and indexed by a [`bvh::Bvh`]. Each query becomes a very short ray whose
//! origin is the query; the ray intersects exactly the cubes that contain the
//! query, so traversal enumerates the candidate neighbors. On top of that sit
//! two optimizations: Morton-ordered query scheduling ([`schedule`]) and
//! grid-driven query partitioning with reduced cube widths ([`partition`]),
//! whose partitions can be bundled under a build/search cost model
//! ([`bundle`]).

pub mod bundle;
pub mod bvh;
pub mod error;
pub mod geom;
pub mod oracle;
pub mod partition;
pub mod pipeline;
pub mod schedule;

pub use error::{Error, Result};
