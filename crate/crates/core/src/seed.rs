//! Seed derivation.
//!
//! Every random stream in an experiment comes from one top-level seed. A
//! named stream gets its own seed by mixing the FNV-1a hash of its label into
//! the root with the SplitMix64 finalizer, so adding or removing a stream
//! never shifts the numbers any other stream sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for every random stream.
pub type SeededRng = ChaCha8Rng;

/// SplitMix64 output function applied to `x + golden gamma`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Seed of the stream called `label` under `root`.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    splitmix64(splitmix64(root) ^ fnv1a(label))
}

pub fn stream(root: u64, label: &str) -> SeededRng {
    SeededRng::seed_from_u64(derive_seed(root, label))
}
