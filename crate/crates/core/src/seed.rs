//! Deterministic seed derivation.
//!
//! Every random stream in a run is keyed by the master seed plus a purpose
//! tag and a few integer coordinates (node id, epoch, ...). Keys are folded
//! through SplitMix64 so that neighbouring coordinates land on unrelated
//! ChaCha streams:
//!
//! ```text
//! h0 = splitmix64(master ^ tag)
//! h_{i+1} = splitmix64(h_i ^ coord_i)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags; fixed values so derived seeds are stable across versions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 0x1111_0001,
    Shuffle = 0x1111_0002,
    Partition = 0x1111_0003,
    Subset = 0x1111_0004,
    Poison = 0x1111_0005,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, stream: Stream, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(master ^ stream as u64), |h, &c| splitmix64(h ^ c))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
