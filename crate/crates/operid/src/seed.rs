//! Deterministic seed derivation for trials, cameras, and sampling stages.
//!
//! All randomness in the protocol flows through `derive`, so a run is a
//! pure function of the master seed and the dataset.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for combining words into a seed.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a list of context words.
pub fn derive(master: u64, parts: &[u64]) -> u64 {
    let mut state = mix(master);
    for &p in parts {
        state = mix(state ^ mix(p));
    }
    state
}

/// Context tag for training-selection shuffles.
pub const TAG_TRAIN: u64 = 0x7472_6169_6e00_0001;
/// Context tag for test-selection shuffles.
pub const TAG_TEST: u64 = 0x7465_7374_0000_0002;
/// Context tag for negative-pair sampling.
pub const TAG_PAIRS: u64 = 0x7061_6972_7300_0003;

/// Seeded RNG used throughout; the stream is stable across platforms.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Order-insensitive digest of a set of u64 keys (for audit trails).
pub fn digest_sorted(keys: &[u64]) -> u64 {
    let mut sorted = keys.to_vec();
    sorted.sort_unstable();
    let mut acc = 0xcbf2_9ce4_8422_2325u64;
    for k in sorted {
        acc = mix(acc ^ mix(k));
    }
    acc
}
