//! Seed derivation.
//!
//! Every random stream in the system is a ChaCha8 generator seeded from a
//! 64-bit value derived here. The per-case decision seed is
//!
//! ```text
//! case_seed = splitmix64( splitmix64(global ^ fnv1a64(cell_id)) ^ splitmix64(case_index) )
//! ```
//!
//! so a case's stream depends only on the global seed, its own cell id and its
//! index; never on other cells or on worker scheduling.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of the SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a of a string's UTF-8 bytes.
pub fn fnv1a64(s: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(s.as_bytes());
    h.finish()
}

pub fn case_seed(global_seed: u64, cell_id: &str, case_index: u64) -> u64 {
    splitmix64(splitmix64(global_seed ^ fnv1a64(cell_id)) ^ splitmix64(case_index))
}

/// Seed for an indexed substream with no cell component (cohort generation).
pub fn indexed_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(index))
}

/// Seed keyed by a string label (evidence streams keyed by participant id).
pub fn keyed_seed(seed: u64, key: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(key))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
