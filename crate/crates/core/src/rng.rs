//! Seeded random streams.
//!
//! ChaCha8 is a counter-mode generator, so independent streams are obtained by
//! selecting a stream id rather than by re-seeding, and results do not depend
//! on which thread consumes which stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-replicate seed: `base ^ replicate`.
pub fn replicate_seed(base: u64, replicate: u64) -> u64 {
    base ^ replicate
}
