//! Seedable, portable random streams.
//!
//! Every stochastic routine in the workspace draws from [`ChaCha8Rng`]. A
//! `(seed, stream)` pair identifies an independent, reproducible sequence:
//! the seed is expanded with `seed_from_u64` and the stream id selects one of
//! ChaCha's 2^64 disjoint streams. Callers that need parallel sampling give
//! each worker its own stream id instead of sharing one generator.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// Stream ids reserved by the library, so that e.g. noise and kernel draws made
/// from the same user seed never overlap.
pub mod streams {
    pub const DEFAULT: u64 = 0;
    pub const NOISE: u64 = 1;
    pub const KERNEL: u64 = 2;
    pub const CROP: u64 = 3;
    pub const INIT: u64 = 4;
    pub const PROBE: u64 = 5;
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
