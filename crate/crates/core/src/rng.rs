//! Reproducible random streams.
//!
//! Every walker owns one ChaCha8 stream selected by `(master seed, stream id)`.
//! Stream ids for nested objects (event, replica, segment, ...) are derived by
//! hashing the path of indices, so results never depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identity of a random stream: master seed plus a 64-bit stream selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub seed: u64,
    pub stream: u64,
}

impl StreamId {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Child stream obtained by mixing `index` into this stream's selector.
    pub fn child(self, index: u64) -> Self {
        Self {
            seed: self.seed,
            stream: mix(self.stream ^ mix(index.wrapping_add(0x9e37_79b9_7f4a_7c15))),
        }
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// SplitMix64 finaliser.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
