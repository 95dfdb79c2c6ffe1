use crate::tensor::Tensor;
use crate::{Error, Result};

/// Softmax of the raw amplitudes.
pub fn resolution_weights(amplitudes: &[f64]) -> Result<Vec<f64>> {
    if amplitudes.is_empty() || amplitudes.iter().any(|a| !a.is_finite()) {
        return Err(Error::Invalid(format!("invalid amplitudes {amplitudes:?}")));
    }
    let max = amplitudes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = amplitudes.iter().map(|a| (a - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Amplitude-weighted sum of the K per-resolution outputs of one scale.
pub fn multi_resolution_mix(reps: &[Tensor], amplitudes: &[f64]) -> Result<Tensor> {
    if reps.len() != amplitudes.len() {
        return Err(Error::Invalid(format!(
            "{} representations but {} amplitudes",
            reps.len(),
            amplitudes.len()
        )));
    }
    let weights = resolution_weights(amplitudes)?;
    let shape = reps[0].shape();
    if reps.iter().any(|r| r.shape() != shape) {
        return Err(Error::Invalid(
            "representations to mix differ in shape".into(),
        ));
    }
    let mut acc = reps[0].scale(weights[0]);
    for (r, &w) in reps.iter().zip(&weights).skip(1) {
        acc = acc.add(&r.scale(w))?;
    }
    Ok(acc)
}
