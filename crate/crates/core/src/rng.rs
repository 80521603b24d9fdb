//! Deterministic seed derivation and sampling helpers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::nn::Matrix;

pub type DetRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of tags into an independent sub-seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_for(seed: u64, tags: &[u64]) -> DetRng {
    DetRng::seed_from_u64(derive_seed(seed, tags))
}

pub fn standard_normal(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, standard_normal(rng, rows * cols))
}

/// Stream tags, so unrelated consumers of one seed never share a stream.
pub mod tags {
    pub const INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const LOSS: u64 = 4;
    pub const COMPONENT: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const PRETRAIN: u64 = 7;
    pub const KMEANS: u64 = 8;
    pub const WEIGHT: u64 = 9;
    pub const SPLIT: u64 = 10;
}
