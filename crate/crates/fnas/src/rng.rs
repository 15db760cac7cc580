//! Derived random streams.
//!
//! Every random decision in the crate draws from a generator derived from the
//! experiment seed plus a path of stream/index identifiers. Components never
//! share generator state, so fan-out order and thread scheduling cannot change
//! results, and resuming a run mid-way reproduces the exact tail.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels for the top level of a derivation path.
pub mod stream {
    pub const POLICY_INIT: u64 = 1;
    pub const POLICY_SAMPLE: u64 = 2;
    pub const CRITIC_INIT: u64 = 3;
    pub const SURROGATE: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const DATASET: u64 = 6;
    pub const TOY_TRAIN: u64 = 7;
    pub const REPLAY: u64 = 8;
    pub const FRESH_BLOCK: u64 = 9;
    pub const ANALYSIS: u64 = 10;
    pub const GRADCHECK: u64 = 11;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives an independent generator from `seed` and a path of identifiers.
pub fn derive(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed ^ 0x5851_f42d_4c95_7f2d);
    for &id in path {
        state = splitmix64(state ^ id.wrapping_mul(0xd605_0b1c_6e9f_1b6b));
    }
    ChaCha8Rng::seed_from_u64(state)
}

/// Standard-normal draw via Box-Muller; two uniforms per call.
pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
