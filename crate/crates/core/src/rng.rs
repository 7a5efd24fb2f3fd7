//! Deterministic, splittable random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream id reserved for the planted weights.
pub const WEIGHTS_STREAM: u64 = u64::MAX;
/// Stream id reserved for starting vectors of iterative solvers.
pub const START_STREAM: u64 = u64::MAX - 1;

/// A ChaCha8 generator for `(seed, stream)`. Distinct streams are independent,
/// so per-row generation is order-independent and reproducible.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
