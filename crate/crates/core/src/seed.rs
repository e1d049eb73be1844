//! Deterministic sub-seed derivation.
//!
//! All randomness in a run flows from one global seed. Each consumer derives
//! its own stream as `global_seed ^ fnv1a64(scope)` where `scope` is a fixed
//! string like `"attack.train"` or `"noise.replica.2"`. FNV-1a is inlined so
//! the derivation never changes underneath saved experiment outputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Sub-seed for a named scope under a global seed.
pub fn sub_seed(global_seed: u64, scope: &str) -> u64 {
    global_seed ^ fnv1a64(scope.as_bytes())
}

/// Seeded RNG for a named scope. ChaCha8 keeps streams stable across
/// platforms and library versions.
pub fn rng_for(global_seed: u64, scope: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(global_seed, scope))
}
