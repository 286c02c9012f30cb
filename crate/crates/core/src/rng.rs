//! Seed derivation. Every random stream is a ChaCha8 stream selected by
//! `(master seed, stream index)`, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream reserved for synthetic data generation.
pub const DATA_STREAM: u64 = u64::MAX;
/// First stream used by verification checks; check `k` uses `CHECK_STREAM_BASE + k`.
pub const CHECK_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StreamSeed {
    pub master: u64,
    pub stream: u64,
}

impl StreamSeed {
    pub const fn new(master: u64, stream: u64) -> Self {
        Self { master, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }
}

impl From<u64> for StreamSeed {
    fn from(master: u64) -> Self {
        Self::new(master, 0)
    }
}
