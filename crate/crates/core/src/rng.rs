//! Seed derivation. Every stochastic stage draws from its own ChaCha stream
//! keyed by `(base seed, labels...)`, so results do not depend on how much
//! randomness other stages consumed or on how work was split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with an ordered list of labels into a new seed.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(base), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, labels: &[u64]) -> Rng {
    rng_from_seed(derive_seed(base, labels))
}

/// Stream labels used by the trainer and evaluator.
pub mod stream {
    pub const QUERIES: u64 = 1;
    pub const GEN_ROLLOUT: u64 = 2;
    pub const CANDIDATES: u64 = 3;
    pub const BALANCE: u64 = 4;
    pub const JUDGE_ROLLOUT: u64 = 5;
    pub const EVAL_SET: u64 = 6;
    pub const EVAL: u64 = 7;
    pub const WARM_START: u64 = 8;
    pub const INIT: u64 = 9;
    pub const VERIFY_SCORES: u64 = 10;
}
