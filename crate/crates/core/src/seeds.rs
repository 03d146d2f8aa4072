//! Deterministic random streams derived from one run seed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STATE_INIT: u64 = 1;
pub const ADJOINT_INIT: u64 = 2;
pub const CONTROL_INIT: u64 = 3;
pub const FLOW_INIT: u64 = 4;
pub const UNIFORM_SAMPLES: u64 = 10;
pub const BATCHES: u64 = 20;
pub const FLOW_TRAIN: u64 = 100;
pub const REFINE: u64 = 200;

/// Independent generator for `(seed, stream)`.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// A child seed for `(seed, stream)`.
pub fn derive(seed: u64, stream: u64) -> u64 {
    rng(seed, stream).next_u64()
}
