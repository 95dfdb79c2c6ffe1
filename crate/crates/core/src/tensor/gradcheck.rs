//! Central finite-difference gradient checking.
//!
//! The numerical side only evaluates forward values, so it shares nothing
//! with the backward rules it verifies.

use super::{Result, Tensor};

/// One input to a checked function: its shape and values.
#[derive(Clone, Debug)]
pub struct Input {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Input {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Input {
        Input {
            shape: shape.to_vec(),
            values,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    pub max_rel_error: f64,
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps exact zeros from
/// dominating through round-off.
pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

pub fn numerical_gradient(
    f: &dyn Fn(&[Tensor]) -> Result<Tensor>,
    inputs: &[Input],
    which: usize,
    h: f64,
) -> Result<Vec<f64>> {
    let eval = |values: &[Vec<f64>]| -> Result<f64> {
        let ts = inputs
            .iter()
            .zip(values)
            .map(|(inp, v)| Tensor::constant(&inp.shape, v.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(f(&ts)?.item())
    };
    let mut values: Vec<Vec<f64>> = inputs.iter().map(|i| i.values.clone()).collect();
    let mut grad = Vec::with_capacity(values[which].len());
    for j in 0..values[which].len() {
        let orig = values[which][j];
        values[which][j] = orig + h;
        let up = eval(&values)?;
        values[which][j] = orig - h;
        let down = eval(&values)?;
        values[which][j] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

pub fn analytic_gradients(
    f: &dyn Fn(&[Tensor]) -> Result<Tensor>,
    inputs: &[Input],
) -> Result<Vec<Vec<f64>>> {
    let ts = inputs
        .iter()
        .map(|i| Tensor::param(&i.shape, i.values.clone()))
        .collect::<Result<Vec<_>>>()?;
    f(&ts)?.backward()?;
    Ok(ts
        .iter()
        .map(|t| t.grad().expect("param has grad"))
        .collect())
}

/// Compares backward against central differences for every input element.
pub fn check(
    f: &dyn Fn(&[Tensor]) -> Result<Tensor>,
    inputs: &[Input],
    h: f64,
    floor: f64,
) -> Result<GradReport> {
    let analytic = analytic_gradients(f, inputs)?;
    let numeric = (0..inputs.len())
        .map(|i| numerical_gradient(f, inputs, i, h))
        .collect::<Result<Vec<_>>>()?;
    let max_rel_error = analytic
        .iter()
        .flatten()
        .zip(numeric.iter().flatten())
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max);
    Ok(GradReport {
        analytic,
        numeric,
        max_rel_error,
    })
}
