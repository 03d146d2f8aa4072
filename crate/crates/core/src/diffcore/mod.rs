//! Reverse-mode differentiation, networks and optimizers.

pub mod checkpoint;
pub mod mlp;
pub mod optim;
pub mod tape;
pub mod verify;

pub use mlp::{mlp_init, param_count, Activation, JetVars, NetVars, Network};
pub use optim::{Adam, Lbfgs, Method, Objective, OptimizerState, StepReport};
pub use tape::{Gradients, Tape, Var};
