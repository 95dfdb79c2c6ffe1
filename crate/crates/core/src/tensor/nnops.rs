use super::{numel_of, Result, Tensor, TensorError};

fn axis_view(op: &'static str, x: &Tensor, axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= x.rank() {
        return Err(TensorError::AxisOutOfRange {
            op,
            axis,
            rank: x.rank(),
        });
    }
    let s = x.shape();
    Ok((numel_of(&s[..axis]), s[axis], numel_of(&s[axis + 1..])))
}

fn finite(op: &'static str, x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

/// Numerically stable softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, n, inner) = axis_view("softmax", x, axis)?;
    let xv = x.data();
    finite("softmax", &xv)?;
    let mut y = vec![0.0; xv.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let max = (0..n).map(|k| xv[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..n {
                let e = (xv[at(k)] - max).exp();
                y[at(k)] = e;
                total += e;
            }
            for k in 0..n {
                y[at(k)] /= total;
            }
        }
    }
    drop(xv);
    let saved = y.clone();
    Ok(Tensor::from_op(
        "softmax",
        x.shape().to_vec(),
        y,
        vec![x.clone()],
        Box::new(move |g| {
            let mut gx = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * n + k) * inner + i;
                    let dot: f64 = (0..n).map(|k| g[at(k)] * saved[at(k)]).sum();
                    for k in 0..n {
                        gx[at(k)] = saved[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// `x − logsumexp(x)` along `axis`.
pub fn log_softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, n, inner) = axis_view("log_softmax", x, axis)?;
    let xv = x.data();
    finite("log_softmax", &xv)?;
    let mut y = vec![0.0; xv.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let max = (0..n).map(|k| xv[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..n).map(|k| (xv[at(k)] - max).exp()).sum::<f64>().ln();
            for k in 0..n {
                y[at(k)] = xv[at(k)] - lse;
            }
        }
    }
    drop(xv);
    let saved = y.clone();
    Ok(Tensor::from_op(
        "log_softmax",
        x.shape().to_vec(),
        y,
        vec![x.clone()],
        Box::new(move |g| {
            let mut gx = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * n + k) * inner + i;
                    let total: f64 = (0..n).map(|k| g[at(k)]).sum();
                    for k in 0..n {
                        gx[at(k)] = g[at(k)] - saved[at(k)].exp() * total;
                    }
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Normalizes over the last axis, then applies `gain` and `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(TensorError::Invalid(format!(
            "layer_norm: eps must be > 0, got {eps}"
        )));
    }
    let n = *x
        .shape()
        .last()
        .ok_or_else(|| TensorError::Invalid("layer_norm on rank-0 tensor".into()))?;
    if gain.shape() != [n] || bias.shape() != [n] {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gain.shape().to_vec(),
        });
    }
    let rows = x.numel() / n;
    let xv = x.data();
    let gv = gain.to_vec();
    let bv = bias.data();
    let mut xhat = vec![0.0; xv.len()];
    let mut inv_std = vec![0.0; rows];
    let mut y = vec![0.0; xv.len()];
    for r in 0..rows {
        let row = &xv[r * n..(r + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for j in 0..n {
            let h = (row[j] - mean) * is;
            xhat[r * n + j] = h;
            y[r * n + j] = h * gv[j] + bv[j];
        }
    }
    drop((xv, bv));
    let needs = (
        x.requires_grad(),
        gain.requires_grad(),
        bias.requires_grad(),
    );
    Ok(Tensor::from_op(
        "layer_norm",
        x.shape().to_vec(),
        y,
        vec![x.clone(), gain.clone(), bias.clone()],
        Box::new(move |g| {
            let gx = needs.0.then(|| {
                let mut gx = vec![0.0; g.len()];
                for r in 0..rows {
                    let gr = &g[r * n..(r + 1) * n];
                    let hr = &xhat[r * n..(r + 1) * n];
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..n {
                        let gh = gr[j] * gv[j];
                        m1 += gh;
                        m2 += gh * hr[j];
                    }
                    m1 /= n as f64;
                    m2 /= n as f64;
                    for j in 0..n {
                        gx[r * n + j] = inv_std[r] * (gr[j] * gv[j] - m1 - hr[j] * m2);
                    }
                }
                gx
            });
            let gg = needs.1.then(|| {
                let mut gg = vec![0.0; n];
                for r in 0..rows {
                    for j in 0..n {
                        gg[j] += g[r * n + j] * xhat[r * n + j];
                    }
                }
                gg
            });
            let gb = needs.2.then(|| {
                let mut gb = vec![0.0; n];
                for r in 0..rows {
                    for j in 0..n {
                        gb[j] += g[r * n + j];
                    }
                }
                gb
            });
            vec![gx, gg, gb]
        }),
    ))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu(x: &Tensor) -> Tensor {
    let xv = x.to_vec();
    let y = xv
        .iter()
        .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()))
        .collect();
    Tensor::from_op(
        "gelu",
        x.shape().to_vec(),
        y,
        vec![x.clone()],
        Box::new(move |g| {
            let gx = g
                .iter()
                .zip(&xv)
                .map(|(g, &v)| {
                    let u = GELU_C * (v + 0.044715 * v * v * v);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                    g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                })
                .collect();
            vec![Some(gx)]
        }),
    )
}
