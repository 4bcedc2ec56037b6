//! Deterministic seed derivation.
//!
//! Every randomized step derives its own seed from a master seed, a textual
//! label, and an index. Derivation is a fixed byte-level hash, so results are
//! identical across platforms and independent of evaluation order, which lets
//! folds, trees, and bootstrap replicates run in parallel without changing
//! output.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the master seed, label bytes, and index, finished with a
/// splitmix64 avalanche so that nearby inputs land far apart.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf29ce484222325;
    const FNV_PRIME: u64 = 0x100000001b3;

    let mut h = FNV_OFFSET;
    for chunk in [master.to_le_bytes(), index.to_le_bytes()] {
        for b in chunk {
            h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
        }
    }
    for b in label.as_bytes() {
        h = (h ^ *b as u64).wrapping_mul(FNV_PRIME);
    }

    // splitmix64 finalizer
    let mut z = h.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Stream cipher RNG for a derived seed. ChaCha8 is reproducible across
/// platforms and fast enough for simulation workloads.
pub fn rng_for(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label, index))
}
