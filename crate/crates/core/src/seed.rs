//! Seed derivation.
//!
//! Every random stream is a `ChaCha8Rng` keyed by a 64-bit seed. Derived seeds
//! are `splitmix64(master ^ fnv1a(label))`, chained per label, so a stream
//! depends only on its own labels and never on how many other streams exist.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Mixes `labels` into `seed` one at a time.
pub fn derive(seed: u64, labels: &[&str]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(seed), |acc, label| splitmix64(acc ^ fnv1a(label)))
}
