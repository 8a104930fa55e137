//! Gradient-based optimisers over flat parameter vectors.

pub mod adam;
pub mod lbfgs;

pub use adam::Adam;
pub use lbfgs::{minimize, LbfgsConfig, LbfgsReport, Termination};
