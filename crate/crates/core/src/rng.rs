//! Deterministic RNG stream derivation.
//!
//! Every random choice in the simulator draws from a ChaCha stream keyed by
//! the run seed plus a purpose tag and the identifiers that scope the choice
//! (trainer, epoch, step, ...). Streams are independent of each other and of
//! execution order, so a pipeline that prepares minibatches ahead of time
//! samples exactly the same blocks as one that does not.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep streams for different subsystems disjoint even when the
/// scoping identifiers collide.
pub mod tag {
    pub const EPOCH_ORDER: u64 = 0x45504f43; // "EPOC"
    pub const SAMPLE: u64 = 0x53414d50; // "SAMP"
    pub const TRAIN_SPLIT: u64 = 0x5452534c; // "TRSL"
    pub const GENERATE: u64 = 0x47454e52; // "GENR"
    pub const FEATURES: u64 = 0x46454154; // "FEAT"
}

/// splitmix64 finalizer; full-avalanche, stable across platforms.
#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Folds a key sequence into a single 64-bit state.
#[inline]
pub fn mix_key(seed: u64, keys: &[u64]) -> u64 {
    let mut state = splitmix64(seed);
    for &k in keys {
        state = splitmix64(state ^ splitmix64(k));
    }
    state
}

/// A ChaCha stream for `(seed, keys...)`. Same inputs, same stream, on every
/// platform and rand version pinned by the lockfile.
pub fn stream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_key(seed, keys))
}
