//! Seeded random streams.
//!
//! Every stochastic routine derives an independent ChaCha stream from a
//! `(seed, index)` pair, so results do not depend on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere in the crate.
pub type LabRng = ChaCha8Rng;

/// Generator for the main stream of `seed`.
pub fn seeded(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `index` under `seed` (trial, path, ...).
pub fn stream(seed: u64, index: u64) -> LabRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
