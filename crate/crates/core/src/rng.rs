//! Seeded random streams.
//!
//! Every worker owns a ChaCha8 stream addressed by `(seed, stream id)`, so
//! parallel loops produce the same numbers no matter how rayon schedules them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Tags keep streams for different purposes (start pools, kernel steps,
/// replications) apart under the same base seed.
pub(crate) fn tagged_stream(tag: u64, index: u64) -> u64 {
    debug_assert!(index < (1 << 48));
    (tag << 48) | index
}
