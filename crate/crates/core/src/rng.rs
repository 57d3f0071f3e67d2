//! Seeded random streams.
//!
//! Every random draw in the toolkit comes from ChaCha8 (`rand_chacha`), seeded
//! with `seed_from_u64(seed)` and then moved to a fixed per-purpose stream with
//! `set_stream`. The same seed therefore yields independent, reproducible
//! sequences for each purpose on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids; one per consumer of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    AugmentNoise = 1,
    PatchSampling = 2,
    PhantomPlacement = 3,
    PhantomNoise = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
