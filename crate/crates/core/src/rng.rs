//! Splittable random streams.
//!
//! Every routine that draws randomness takes an [`RngStream`]. Child streams
//! are derived from a parent by a key, so chain `c` of a run seeded with `s`
//! always sees the same numbers no matter how many other chains exist or in
//! which order they are scheduled.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Clone, Debug)]
pub struct RngStream {
    key: u64,
    inner: ChaCha20Rng,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        let key = splitmix64(seed);
        RngStream {
            key,
            inner: ChaCha20Rng::seed_from_u64(key),
        }
    }

    /// A child stream identified by `label`. Deriving does not advance the
    /// parent, and distinct labels give statistically independent streams.
    pub fn derive(&self, label: u64) -> Self {
        let key = splitmix64(self.key ^ splitmix64(label.wrapping_add(0x6a09_e667_f3bc_c909)));
        RngStream {
            key,
            inner: ChaCha20Rng::seed_from_u64(key),
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
