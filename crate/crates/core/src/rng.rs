//! Seed derivation for independent, order-free generator streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used everywhere randomness enters the pipeline.
pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with an arbitrary byte label (e.g. an item id).
pub fn derive_seed(base: u64, label: &[u8]) -> u64 {
    // FNV-1a over the label, then a splitmix finalizer keyed by the base.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in label {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(base ^ splitmix64(h))
}

/// Mixes a base seed with a numeric index (e.g. a bootstrap resample).
pub fn derive_seed_indexed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_mul(GOLDEN)))
}

pub fn stream(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}
