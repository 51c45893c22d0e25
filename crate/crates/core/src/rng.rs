//! Seeded random streams.
//!
//! Every run derives its randomness from one seed. Components draw from
//! named substreams (`data`, `init`, `training`, `eval`) so that changing
//! how much one component consumes never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

pub type Rng = ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic generator for the substream `name` of `seed`.
pub fn substream(seed: u64, name: &str) -> Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(name.as_bytes()).to_le_bytes());
    key[16..24].copy_from_slice(&(name.len() as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// `rows x cols` matrix of independent standard normal draws.
pub fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches length")
}
