//! Seedable, splittable random streams.
//!
//! Every random draw in the crate comes from a [`SeedPath`]: a master seed
//! plus a stream index. ChaCha supports 2^64 independent streams per key, so
//! splitting is just picking a different stream, and any single draw can be
//! replayed from its path alone.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedPath {
    pub master: u64,
    pub stream: u64,
}

impl SeedPath {
    pub fn new(master: u64, stream: u64) -> Self {
        Self { master, stream }
    }

    pub fn root(master: u64) -> Self {
        Self { master, stream: 0 }
    }

    /// Stream `index` under this path's master seed, offset from the current
    /// stream so that nested splits do not collide with the parent.
    pub fn split(self, index: u64) -> Self {
        let mixed = splitmix64(self.stream ^ splitmix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        Self { master: self.master, stream: mixed }
    }

    pub fn rng(self) -> Stream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }
}

impl fmt::Display for SeedPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.master, self.stream)
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
