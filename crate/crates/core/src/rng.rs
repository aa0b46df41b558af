//! Hierarchical seeding.
//!
//! Every random draw in the crate comes from a [`StreamKey`] path such as
//! `master -> epoch -> period -> sample`. Each path hashes to an independent
//! ChaCha8 stream, so the order in which streams are consumed (or whether they
//! are consumed at all) never changes the numbers another stream produces.
//! Parallel loops therefore give bit-identical results to sequential ones.
//!
//! Normal variates come from `rand_distr::StandardNormal` (ziggurat), pinned by
//! the `rand_distr` version in the workspace manifest.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named stream domains, used as the first child below a master seed.
pub mod domain {
    pub const INIT: u64 = 1;
    pub const EPOCH: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const TRIAL: u64 = 4;
    pub const DATA: u64 = 5;
    pub const TRUTH: u64 = 6;
}

/// Within a period stream: samples used by the score-function estimator.
pub const SAMPLE_STREAM: u64 = 0;
/// Within a period stream: noise used by the perturbed top-K estimator.
pub const NOISE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(splitmix64(seed ^ 0x5eed_0f_da31))
    }

    pub fn child(self, index: u64) -> Self {
        StreamKey(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15))))
    }

    pub fn rng(self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
