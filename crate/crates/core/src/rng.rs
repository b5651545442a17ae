//! Named, independent random streams derived from a single seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Each consumer of randomness draws from its own ChaCha stream, so adding
/// draws in one place never shifts the values seen elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Noise = 1,
    Collection = 2,
    Split = 3,
    Training = 4,
    Misalignment = 5,
    Calibration = 6,
    Registration = 7,
    Initialization = 8,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
