//! Deterministic seed derivation.
//!
//! A single run seed fans out into independent sub-seeds (noise injection,
//! parameter init, per-epoch shuffles, augmentation draws, metric draws) so
//! that changing one consumer never perturbs another's stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for [`child_seed`]. Each randomness consumer gets its own tag.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const METRICS: u64 = 6;
    pub const MEANS: u64 = 7;
    pub const SAMPLES: u64 = 8;
    pub const TEST_SAMPLES: u64 = 9;
}

/// Derive an independent child seed from `(base, tag)` via splitmix64 mixing.
pub fn child_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The crate's generator: portable, cheap to construct, seedable from a u64.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// FNV-1a offset basis; start value for [`fnv1a_extend`] chains.
pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

/// Fold the raw bit patterns of `xs` into an FNV-1a accumulator.
pub fn fnv1a_extend(mut h: u64, xs: &[f64]) -> u64 {
    for v in xs {
        for b in v.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// FNV-1a over the raw bit patterns of a feature vector.
///
/// Used to key per-example augmentation draws in the consistency measure so
/// that measuring a filtered subset reproduces the full-set draws exactly.
pub fn feature_hash(x: &[f64]) -> u64 {
    fnv1a_extend(FNV_OFFSET, x)
}
