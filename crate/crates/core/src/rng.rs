//! Counter-based random substreams.
//!
//! Every random draw made by the sampler is addressed by a key
//! `(seed, stream, index)`. A stream is derived by folding tags (outer step,
//! inner step, purpose) into the key, and the index selects a word offset
//! inside the ChaCha keystream. Draws therefore do not depend on the order in
//! which positions are visited, so per-position sampling can run in parallel
//! and still reproduce bit-for-bit.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Address of a ChaCha8 keystream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    seed: u64,
    stream: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes `tag` into `seed`; used to derive per-image and per-chain seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_add(0x632B_E59B_D9B4_E019)))
}

impl StreamKey {
    /// Root key for `seed`.
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// Derives a sub-stream. Children with different tags are disjoint.
    pub fn child(self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(tag ^ 0xD1B5_4A32_D192_ED03)),
        }
    }

    /// Seed identifying this stream.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A sequential generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Uniform draw in `[0, 1)` at word offset `index` of this stream.
    pub fn uniform(&self, index: u64) -> f64 {
        let mut rng = self.rng();
        rng.set_word_pos(u128::from(index) * 2);
        (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
