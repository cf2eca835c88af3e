//! Derived seeds.
//!
//! One run-level seed fans out to independent streams by mixing in a
//! stage label and a counter with SplitMix64, so that adding a stage never
//! perturbs the streams of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Seed for `(stage, counter)` under `root`.
pub fn derive(root: u64, stage: &str, counter: u64) -> u64 {
    splitmix64(splitmix64(root ^ label_hash(stage)).wrapping_add(counter))
}

pub fn rng(root: u64, stage: &str, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, stage, counter))
}
