//! Seeded random streams.
//!
//! Every consumer derives its own ChaCha stream from `(seed, stream id)`, so
//! draws never depend on what other components consumed before.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids used across the crate.
pub mod streams {
    pub const MODEL_INIT: u64 = 1;
    pub const DATA_ORDER: u64 = 2;
    pub const GRADCHECK: u64 = 3;
    /// Scene `i` of a dataset uses `SCENE_BASE + i`.
    pub const SCENE_BASE: u64 = 1 << 32;
}

pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
