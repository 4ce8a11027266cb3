//! Kolmogorov-Arnold attention for graph neural networks, with a small
//! reverse-mode tensor engine and tools for checking ranking-distance bounds.

pub mod attention;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod kan;
pub mod mrd;
pub mod params;
pub mod tensor;

pub use error::{KaaError, Result};
