//! Seed derivation for reproducible runs.
//!
//! Every source of randomness in the crate is a `ChaCha8Rng` seeded through
//! [`stream_rng`], so a single master seed pins an entire run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive an independent named stream from a master seed.
///
/// The label keeps unrelated consumers (spawning, exploration noise, replay
/// sampling) from sharing a sequence even when they draw in lockstep.
pub fn stream_rng(master_seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(master_seed, label, index))
}

/// Derive a child seed, e.g. for a per-episode world reset.
pub fn derive_seed(master_seed: u64, label: &str, index: u64) -> u64 {
    mix(master_seed, label, index)
}

fn mix(seed: u64, label: &str, index: u64) -> u64 {
    // FNV-1a over the label, then splitmix-style avalanche with seed+index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h.rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
