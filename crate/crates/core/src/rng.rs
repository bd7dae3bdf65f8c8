//! Seeded, platform-independent random streams (ChaCha8).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids keep independent consumers of one seed from overlapping.
pub mod streams {
    pub const DATASET: u64 = 1;
    pub const BATCHES: u64 = 2;
    pub const INIT: u64 = 3;
    pub const Q_LEARNING: u64 = 4;
    pub const BOOTSTRAP: u64 = 5;
    pub const TEST: u64 = 99;
}

pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
