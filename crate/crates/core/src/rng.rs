//! Seed-derived random streams.
//!
//! Every stochastic component draws from its own ChaCha stream keyed by
//! `(seed, stream)`, so adding draws in one component never shifts another.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Stream = ChaCha8Rng;

/// Stream identifiers used across the crate.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const CHAINS: u64 = 4;
    pub const VALIDATION: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const SYNTH: u64 = 7;
    pub const EVAL: u64 = 8;
}

pub fn stream(seed: u64, stream: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream for a sub-task `index` of `stream` (per epoch, per repeat, ...).
pub fn substream(seed: u64, stream: u64, index: u64) -> Stream {
    // splitmix64 finalizer keeps nearby indices far apart in seed space
    let mut z = seed
        ^ index
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    self::stream(z, stream)
}

/// Source of uniform variates on [0, 1).
///
/// Samplers take this instead of a concrete RNG so tests can stub the draws.
pub trait UniformSource {
    fn uniform(&mut self) -> f64;
}

impl<R: RngCore> UniformSource for R {
    fn uniform(&mut self) -> f64 {
        self.random::<f64>()
    }
}

/// Returns the same value on every draw.
#[derive(Debug, Clone, Copy)]
pub struct ConstUniform(pub f64);

impl UniformSource for ConstUniform {
    fn uniform(&mut self) -> f64 {
        self.0
    }
}

/// Replays a fixed sequence of uniforms, cycling when exhausted.
#[derive(Debug, Clone)]
pub struct SliceUniform<'a> {
    values: &'a [f64],
    pos: usize,
}

impl<'a> SliceUniform<'a> {
    pub fn new(values: &'a [f64]) -> Self {
        assert!(!values.is_empty(), "SliceUniform needs at least one value");
        SliceUniform { values, pos: 0 }
    }
}

impl UniformSource for SliceUniform<'_> {
    fn uniform(&mut self) -> f64 {
        let v = self.values[self.pos % self.values.len()];
        self.pos += 1;
        v
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Uniform draw clamped to `[1e-7, 1 - 1e-7]` for use inside logits.
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>().clamp(1e-7, 1.0 - 1e-7)
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
