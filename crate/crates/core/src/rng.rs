//! Seeded random streams.
//!
//! Every parallel unit of work (a series, a grid cell, a batch element)
//! draws from its own ChaCha stream keyed by `(seed, index)`, so results do
//! not depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Root generator for a seed.
pub fn from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derive a child seed from a parent generator.
pub fn child_seed(rng: &mut Rng) -> u64 {
    use rand::RngCore;
    rng.next_u64()
}
