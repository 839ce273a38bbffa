//! Seed plumbing. Every run has one root seed; components derive their own
//! streams from it by label so that adding a component never shifts the
//! randomness seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Derive a child seed for `label` from `root`.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    splitmix64(root ^ splitmix64(fnv1a(label)))
}

/// Derive a child seed from `root` and an integer index (run number, cell id).
pub fn derive_indexed(root: u64, label: &str, index: u64) -> u64 {
    splitmix64(derive_seed(root, label) ^ splitmix64(index.wrapping_add(1)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
