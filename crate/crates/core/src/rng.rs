//! Portable seeded normal samples.
//!
//! Generator: element `i` of a tensor seeded with `seed` uses SplitMix64
//! outputs number `2i` and `2i + 1` of the stream started at `seed`, i.e.
//! `w(n) = mix64(seed + (n + 1) * 0x9E3779B97F4A7C15)` with wrapping
//! arithmetic. The two words become uniforms
//! `u1 = ((w(2i) >> 11) + 1) * 2^-53` in (0, 1] and
//! `u2 = (w(2i+1) >> 11) * 2^-53` in [0, 1), and the sample is the cosine
//! branch of Box-Muller, `sqrt(-2 ln u1) * cos(2 pi u2)`, evaluated in f64
//! with the `libm` (musl) routines. f32 tensors round that f64 value to
//! nearest. Every step is integer arithmetic or a pure-software libm call,
//! so the stream is bit-reproducible on any platform and in any language
//! that ports these few lines.

use crate::error::Result;
use crate::tensor::{AttnTensor, Dims, Scalar};

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The `n`-th SplitMix64 output for `seed`.
pub fn splitmix64_word(seed: u64, n: u64) -> u64 {
    mix64(seed.wrapping_add(n.wrapping_add(1).wrapping_mul(GAMMA)))
}

/// The `index`-th standard normal sample of the stream for `seed`.
pub fn standard_normal(seed: u64, index: u64) -> f64 {
    let w1 = splitmix64_word(seed, 2 * index);
    let w2 = splitmix64_word(seed, 2 * index + 1);
    let u1 = ((w1 >> 11) + 1) as f64 * TWO_POW_NEG_53;
    let u2 = (w2 >> 11) as f64 * TWO_POW_NEG_53;
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * std::f64::consts::PI * u2)
}

pub fn normal_vec<T: Scalar>(seed: u64, len: usize) -> Vec<T> {
    (0..len as u64)
        .map(|i| T::from_f64(standard_normal(seed, i)))
        .collect()
}

/// Tensor of seeded standard-normal values.
pub fn seeded_random_tensor<T: Scalar>(dims: Dims, seed: u64) -> Result<AttnTensor<T>> {
    let len = dims.checked_len()?;
    Ok(AttnTensor::from_raw(dims, normal_vec(seed, len)))
}

/// Derives an independent sub-seed, e.g. for Q/K/V of one case.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_add(GAMMA)))
}
