//! Deterministic named RNG streams.
//!
//! All randomness in a run flows from a single 64-bit seed. Each component
//! (data generation, parameter init, batch sampling, ...) draws from its own
//! named stream so one component can be varied without perturbing the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives the RNG for a named stream from the run seed.
pub fn stream_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(seed) ^ fnv1a64(stream)))
}

fn fnv1a64(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
