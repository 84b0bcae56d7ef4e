//! Seeded random streams.
//!
//! Every stochastic routine takes a 64-bit seed and derives independent
//! sub-streams from it with [`derive_seed`], so that parallel and serial
//! schedules consume exactly the same randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of stream indices, e.g.
/// `(seed, [generation, candidate])`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &x| splitmix64(acc ^ splitmix64(x)))
}

pub fn derived_rng(seed: u64, path: &[u64]) -> Rng {
    rng_from_seed(derive_seed(seed, path))
}
