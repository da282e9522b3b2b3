//! Repairing broken articulated objects from point-cloud videos.
//!
//! The crate covers the full loop: scene flow and its one-to-one
//! rectification, rigid-motion segmentation, a small language of part edits,
//! a particle simulator with rigid clusters and joints, per-category
//! functionality checks, and the generator and evaluator for the benchmark.

pub mod assignment;
pub mod bench;
pub mod category;
pub mod dsl;
pub mod dynamics;
pub mod error;
pub mod flow;
pub mod func;
pub mod geom;
pub mod rng;
pub mod seg;

pub use category::Category;
pub use error::{Error, Result};
pub use geom::{PointCloud, Vec3};
