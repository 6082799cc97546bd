//! Deterministic random substreams.
//!
//! Every stochastic component draws from a ChaCha8 stream whose key is derived
//! from a root seed and a path of labels, e.g. `(run, replicate, step)`. Two
//! different label paths give statistically independent streams, and the same
//! path always reproduces the same stream regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Labels for the top-level consumers of randomness.
pub mod label {
    pub const SIMULATE: u64 = 0x5349_4d55;
    pub const FILTER: u64 = 0x4649_4c54;
    pub const SMOOTH: u64 = 0x534d_4f4f;
    pub const INIT: u64 = 0x494e_4954;
    pub const REPLICATE: u64 = 0x5245_504c;
    pub const SAEM: u64 = 0x5341_454d;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamSeed(u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl StreamSeed {
    pub fn new(seed: u64) -> Self {
        StreamSeed(splitmix64(seed))
    }

    /// Derive the substream named `label` below this one.
    pub fn child(self, label: u64) -> Self {
        StreamSeed(splitmix64(self.0 ^ splitmix64(label.rotate_left(17) ^ 0xd1b5_4a32_d192_ed03)))
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut z = self.0;
        for chunk in key.chunks_exact_mut(8) {
            z = splitmix64(z);
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}
