//! Seeded random streams. Every stochastic component draws from a ChaCha8
//! stream derived from a master seed, so runs are reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::numerics::Tensor;
use crate::Float;

pub type SdnRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SdnRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn derived(seed: u64, stream: u64) -> SdnRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn normal(rng: &mut SdnRng) -> Float {
    let v: f64 = rng.sample(StandardNormal);
    v as Float
}

pub fn normal_tensor(rng: &mut SdnRng, shape: &[usize], std: Float) -> Tensor {
    Tensor::from_fn(shape, |_| std * normal(rng))
}

pub fn uniform_tensor(rng: &mut SdnRng, shape: &[usize], lo: Float, hi: Float) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let u: f64 = rng.random();
        lo + (hi - lo) * u as Float
    })
}

/// Serializable position of a [`SdnRng`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &SdnRng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> SdnRng {
        let mut r = ChaCha8Rng::from_seed(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(self.word_pos);
        r
    }
}
