//! Named random streams derived from a master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Deterministic seed for the sub-stream `name` of `master`.
pub fn stream_seed(master: u64, name: &str) -> u64 {
    // FNV-1a over the name, then a splitmix64 finaliser mixed with the master seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(master: u64, name: &str) -> StreamRng {
    StreamRng::seed_from_u64(stream_seed(master, name))
}

/// The two streams consumed while a controller runs: plant readout noise and
/// optimizer randomness.
#[derive(Debug, Clone)]
pub struct Streams {
    pub noise: StreamRng,
    pub optimizer: StreamRng,
}

impl Streams {
    pub fn from_master(master: u64) -> Self {
        Streams {
            noise: stream(master, "noise"),
            optimizer: stream(master, "optimizer"),
        }
    }
}
