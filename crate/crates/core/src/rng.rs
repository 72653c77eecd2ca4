//! Seed handling. Every replica gets a seed derived from a master seed and a
//! path of indices, so results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a path of stream indices.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut s = splitmix64(master);
    for &p in path {
        s = splitmix64(s ^ splitmix64(p.wrapping_add(0xD1B5_4A32_D192_ED03)));
    }
    s
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
