//! Neural surrogates for parametric optimal control problems, trained by
//! direct-adjoint looping, with a normalizing-flow sampler that adaptively
//! refines the collocation set.

pub mod adaptive;
pub mod aonn;
pub mod diffcore;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod problems;
pub mod seeds;

pub use error::{Error, Result};
