//! Seed derivation.
//!
//! Every random draw in the toolkit flows from one experiment seed through
//! this module. Each purpose (weight init, epoch shuffling, noise images,
//! k-means seeding, ...) gets its own independent stream derived as
//!
//! ```text
//! stream(seed, purpose, index) = splitmix64(seed ^ fnv1a64(purpose) ^ splitmix64(index))
//! ```
//!
//! so that, e.g., adding an epoch never perturbs weight init, and per-filter
//! or per-restart streams are independent of each other. The generator is
//! ChaCha8, which is deterministic and portable across platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a on the purpose string; cheap, stable, and collision-safe at the
/// handful of purpose labels used here.
fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// splitmix64 finalizer; decorrelates nearby inputs.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the 64-bit seed for a (seed, purpose, index) triple.
pub fn derive_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    splitmix64(seed ^ fnv1a64(purpose) ^ splitmix64(index))
}

/// Derive a ready-to-use generator for a (seed, purpose, index) triple.
pub fn stream(seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, index))
}
