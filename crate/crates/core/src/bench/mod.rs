//! Benchmark generation, the perception-to-fix pipeline and evaluation.

pub mod articulation;
pub mod config;
pub mod eval;
pub mod generate;
pub mod pipeline;
pub mod scenario;
pub mod shapes;
