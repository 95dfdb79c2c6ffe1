//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tspm_core::mixer::MultiScaleSeries;
use tspm_core::Tensor;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::constant(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("shape matches data")
}

/// Embedded multi-scale input `[batch, T/2^m, d]` for `m = 0..=scales`.
pub fn multiscale(
    batch: usize,
    seq_len: usize,
    scales: usize,
    d_model: usize,
    seed: u64,
) -> MultiScaleSeries {
    let levels = (0..=scales)
        .map(|m| random_tensor(&[batch, seq_len >> m, d_model], seed + m as u64))
        .collect();
    MultiScaleSeries::new(levels).expect("halving lengths")
}
