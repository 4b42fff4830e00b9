//! Seed derivation. Every random stream in the toolkit is keyed by a child
//! seed computed from its parent seed, an entity tag and an index, so no RNG
//! state is ever shared between entities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// 64-bit child seed of `(parent, tag, index)`.
pub fn child_seed(parent: u64, tag: &str, index: u64) -> u64 {
    let h = splitmix64(parent);
    let h = splitmix64(h ^ fnv1a(tag));
    splitmix64(h ^ splitmix64(index))
}

pub fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn rng_for(parent: u64, tag: &str, index: u64) -> SimRng {
    rng(child_seed(parent, tag, index))
}

/// `n` i.i.d. standard normal draws.
pub fn standard_normal_vec(rng: &mut SimRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
