//! Seed derivation.
//!
//! Every random quantity in a simulated tree is drawn from a stream keyed by
//! the node label, so the tree is a pure function of the root seed whatever
//! order nodes are expanded in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine a parent key with a child index.
#[inline]
pub fn derive(key: u64, index: u64) -> u64 {
    mix64(key.wrapping_add(GOLDEN).rotate_left(17) ^ mix64(index.wrapping_add(GOLDEN)))
}

/// Key of the root node for a given seed.
#[inline]
pub fn root_key(seed: u64) -> u64 {
    mix64(seed ^ 0x6A09_E667_F3BC_C908)
}

/// Uniform on [0, 1) from a hashed key.
#[inline]
pub fn unit_from_key(key: u64) -> f64 {
    (mix64(key) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Stream domains keep independent quantities of one node apart.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Domain {
    Split = 1,
    Lifetime = 2,
    Noise = 3,
    Replicate = 4,
    Path = 5,
}

#[inline]
pub fn domain_key(key: u64, domain: Domain) -> u64 {
    derive(key, 0xD0_0000 + domain as u64)
}

pub fn stream(key: u64, domain: Domain) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(domain_key(key, domain))
}

/// Seed of replicate `index` under `root`.
pub fn replicate_seed(root: u64, index: u64) -> u64 {
    derive(domain_key(root, Domain::Replicate), index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_keys_differ() {
        let k = root_key(7);
        assert_ne!(derive(k, 0), derive(k, 1));
        assert_ne!(derive(k, 0), derive(derive(k, 0), 0));
        assert_eq!(derive(k, 3), derive(root_key(7), 3));
    }

    #[test]
    fn unit_range() {
        for i in 0..10_000u64 {
            let u = unit_from_key(i);
            assert!((0.0..1.0).contains(&u));
        }
    }
}
