//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from a
//! `(seed, stream id)` pair, so results never depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as StreamRng;

/// Stream ids reserved for the different consumers of a training run.
pub mod stream {
    pub const FORWARD_NOISE: u64 = 1 << 40;
    pub const BACKWARD_NOISE: u64 = 2 << 40;
    pub const INIT: u64 = 3 << 40;
    pub const TRAINER: u64 = 4 << 40;
    pub const EVAL: u64 = 5 << 40;
    pub const FM_TIMES: u64 = 6 << 40;
}

/// Independent generator for `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws a fresh 64-bit seed from `rng`; used to give each batch its own key.
pub fn child_seed<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    rng.random()
}
