//! Direct channels-last convolutions. Inputs are `[rows, cols, ch]` or
//! batched `[batch, rows, cols, ch]`; weights are `[kr, kc, ch_in, ch_out]`.

use super::{Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug)]
struct Geom {
    batch: usize,
    h: usize,
    w: usize,
    ci: usize,
    oh: usize,
    ow: usize,
    co: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
}

impl Geom {
    #[inline]
    fn in_row(&self, o: usize, k: usize) -> Option<usize> {
        (o * self.sh + k)
            .checked_sub(self.ph)
            .filter(|&i| i < self.h)
    }

    #[inline]
    fn in_col(&self, o: usize, k: usize) -> Option<usize> {
        (o * self.sw + k)
            .checked_sub(self.pw)
            .filter(|&i| i < self.w)
    }

    /// Visits every (output pixel, kernel tap, input pixel) triple that
    /// touches real (unpadded) input, as flat base offsets.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for b in 0..self.batch {
            for oy in 0..self.oh {
                for ox in 0..self.ow {
                    let out_off = ((b * self.oh + oy) * self.ow + ox) * self.co;
                    for ky in 0..self.kh {
                        let Some(iy) = self.in_row(oy, ky) else {
                            continue;
                        };
                        for kx in 0..self.kw {
                            let Some(ix) = self.in_col(ox, kx) else {
                                continue;
                            };
                            let in_off = ((b * self.h + iy) * self.w + ix) * self.ci;
                            let w_off = (ky * self.kw + kx) * self.ci * self.co;
                            f(out_off, in_off, w_off);
                        }
                    }
                }
            }
        }
    }

    /// out[b,oy,ox,:] += x[b,iy,ix,:] · W[ky,kx]
    fn forward(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        let (ci, co) = (self.ci, self.co);
        self.for_each_tap(|o, i, wo| {
            let orow = &mut out[o..o + co];
            for (c, &xv) in x[i..i + ci].iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wr = &w[wo + c * co..wo + (c + 1) * co];
                for (ov, wv) in orow.iter_mut().zip(wr) {
                    *ov += xv * wv;
                }
            }
        });
    }

    /// gx[b,iy,ix,:] += W[ky,kx] · gout[b,oy,ox,:]
    fn input_grad(&self, gout: &[f64], w: &[f64], gx: &mut [f64]) {
        let (ci, co) = (self.ci, self.co);
        self.for_each_tap(|o, i, wo| {
            let grow = &gout[o..o + co];
            for (c, gv) in gx[i..i + ci].iter_mut().enumerate() {
                let wr = &w[wo + c * co..wo + (c + 1) * co];
                *gv += grow.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
            }
        });
    }

    /// gw[ky,kx,:,:] += x[b,iy,ix,:] ⊗ gout[b,oy,ox,:]
    fn weight_grad(&self, x: &[f64], gout: &[f64], gw: &mut [f64]) {
        let (ci, co) = (self.ci, self.co);
        self.for_each_tap(|o, i, wo| {
            let grow = &gout[o..o + co];
            for (c, &xv) in x[i..i + ci].iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wr = &mut gw[wo + c * co..wo + (c + 1) * co];
                for (wv, gv) in wr.iter_mut().zip(grow) {
                    *wv += xv * gv;
                }
            }
        });
    }
}

fn split_batch(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize, usize, bool)> {
    match *x.shape() {
        [h, w, c] => Ok((1, h, w, c, false)),
        [b, h, w, c] => Ok((b, h, w, c, true)),
        _ => Err(TensorError::Invalid(format!(
            "{op}: expected rank 3 or 4 input, got shape {:?}",
            x.shape()
        ))),
    }
}

fn weight_dims(op: &'static str, w: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *w.shape() {
        [kh, kw, ci, co] => Ok((kh, kw, ci, co)),
        _ => Err(TensorError::Invalid(format!(
            "{op}: expected weight [kr, kc, ch_in, ch_out], got {:?}",
            w.shape()
        ))),
    }
}

fn out_shape(batched: bool, b: usize, h: usize, w: usize, c: usize) -> Vec<usize> {
    if batched {
        vec![b, h, w, c]
    } else {
        vec![h, w, c]
    }
}

/// 2-D cross-correlation. Output extents are
/// `floor((dim + 2·pad − k) / stride) + 1` per spatial axis.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor> {
    let (batch, h, w, ci, batched) = split_batch("conv2d", input)?;
    let (kh, kw, wci, co) = weight_dims("conv2d", weight)?;
    if wci != ci {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: input.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    if stride.0 == 0 || stride.1 == 0 {
        return Err(TensorError::Invalid("conv2d: zero stride".into()));
    }
    if h + 2 * padding.0 < kh || w + 2 * padding.1 < kw {
        return Err(TensorError::Invalid(format!(
            "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * padding.0,
            w + 2 * padding.1
        )));
    }
    let g = Geom {
        batch,
        h,
        w,
        ci,
        oh: (h + 2 * padding.0 - kh) / stride.0 + 1,
        ow: (w + 2 * padding.1 - kw) / stride.1 + 1,
        co,
        kh,
        kw,
        sh: stride.0,
        sw: stride.1,
        ph: padding.0,
        pw: padding.1,
    };
    let xv = input.to_vec();
    let wv = weight.to_vec();
    let mut out = vec![0.0; batch * g.oh * g.ow * co];
    g.forward(&xv, &wv, &mut out);
    let (need_x, need_w) = (input.requires_grad(), weight.requires_grad());
    Ok(Tensor::from_op(
        "conv2d",
        out_shape(batched, batch, g.oh, g.ow, co),
        out,
        vec![input.clone(), weight.clone()],
        Box::new(move |gout| {
            let gx = need_x.then(|| {
                let mut gx = vec![0.0; xv.len()];
                g.input_grad(gout, &wv, &mut gx);
                gx
            });
            let gw = need_w.then(|| {
                let mut gw = vec![0.0; wv.len()];
                g.weight_grad(&xv, gout, &mut gw);
                gw
            });
            vec![gx, gw]
        }),
    ))
}

/// Adjoint of [`conv2d`] with the same weight layout: maps `ch_out` inputs
/// back to `ch_in` outputs. Output extents `stride·(dim−1) + k − 2·pad`.
pub fn conv_transpose2d(
    input: &Tensor,
    weight: &Tensor,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor> {
    let (batch, oh, ow, co, batched) = split_batch("conv_transpose2d", input)?;
    let (kh, kw, ci, wco) = weight_dims("conv_transpose2d", weight)?;
    if wco != co {
        return Err(TensorError::ShapeMismatch {
            op: "conv_transpose2d",
            lhs: input.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    if stride.0 == 0 || stride.1 == 0 {
        return Err(TensorError::Invalid("conv_transpose2d: zero stride".into()));
    }
    let full_h = stride.0 * (oh - 1) + kh;
    let full_w = stride.1 * (ow - 1) + kw;
    if full_h <= 2 * padding.0 || full_w <= 2 * padding.1 {
        return Err(TensorError::Invalid(format!(
            "conv_transpose2d: padding {padding:?} consumes the whole {full_h}x{full_w} output"
        )));
    }
    let g = Geom {
        batch,
        h: full_h - 2 * padding.0,
        w: full_w - 2 * padding.1,
        ci,
        oh,
        ow,
        co,
        kh,
        kw,
        sh: stride.0,
        sw: stride.1,
        ph: padding.0,
        pw: padding.1,
    };
    let yv = input.to_vec();
    let wv = weight.to_vec();
    let mut out = vec![0.0; batch * g.h * g.w * ci];
    g.input_grad(&yv, &wv, &mut out);
    let (need_y, need_w) = (input.requires_grad(), weight.requires_grad());
    Ok(Tensor::from_op(
        "conv_transpose2d",
        out_shape(batched, batch, g.h, g.w, ci),
        out,
        vec![input.clone(), weight.clone()],
        Box::new(move |gx| {
            let gy = need_y.then(|| {
                let mut gy = vec![0.0; yv.len()];
                g.forward(gx, &wv, &mut gy);
                gy
            });
            let gw = need_w.then(|| {
                let mut gw = vec![0.0; wv.len()];
                g.weight_grad(gx, &yv, &mut gw);
                gw
            });
            vec![gy, gw]
        }),
    ))
}

/// 1-D convolution over `[len, ch]` or `[batch, len, ch]` with weight
/// `[k, ch_in, ch_out]`.
pub fn conv1d(input: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (b, len, c, batched) = match *input.shape() {
        [l, c] => (1, l, c, false),
        [b, l, c] => (b, l, c, true),
        _ => {
            return Err(TensorError::Invalid(format!(
                "conv1d: expected rank 2 or 3 input, got {:?}",
                input.shape()
            )))
        }
    };
    let [k, ci, co] = *weight.shape() else {
        return Err(TensorError::Invalid(format!(
            "conv1d: expected weight [k, ch_in, ch_out], got {:?}",
            weight.shape()
        )));
    };
    let x4 = input.reshape(&[b, 1, len, c])?;
    let w4 = weight.reshape(&[1, k, ci, co])?;
    let y = conv2d(&x4, &w4, (1, stride), (0, padding))?;
    let out_len = y.shape()[2];
    if batched {
        y.reshape(&[b, out_len, co])
    } else {
        y.reshape(&[out_len, co])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::constant(&[2, 3, 1], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let w = Tensor::constant(&[1, 1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(conv2d(&x, &w, (1, 1), (0, 0)).unwrap().to_vec(), x.to_vec());
        assert_eq!(
            conv_transpose2d(&x, &w, (1, 1), (0, 0)).unwrap().to_vec(),
            x.to_vec()
        );
    }

    #[test]
    fn ones_kernel_center_is_nine() {
        let x = Tensor::constant(&[3, 3, 1], vec![1.0; 9]).unwrap();
        let w = Tensor::constant(&[3, 3, 1, 1], vec![1.0; 9]).unwrap();
        let y = conv2d(&x, &w, (1, 1), (1, 1)).unwrap();
        assert_eq!(y.shape(), &[3, 3, 1]);
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
    }

    #[test]
    fn strided_shapes() {
        let w = Tensor::zeros(&[3, 3, 2, 2]).unwrap();
        for (p, f) in [(4, 7), (3, 8), (1, 1), (5, 2)] {
            let x = Tensor::zeros(&[p, f, 2]).unwrap();
            let y = conv2d(&x, &w, (1, 2), (1, 1)).unwrap();
            assert_eq!(y.shape(), &[p, f.div_ceil(2), 2]);
            let z = conv_transpose2d(&y, &w, (1, 2), (1, 1)).unwrap();
            assert_eq!(z.shape(), &[p, 2 * f.div_ceil(2) - 1, 2]);
        }
    }

    #[test]
    fn kernel_larger_than_padded_input() {
        let x = Tensor::zeros(&[1, 1, 1]).unwrap();
        let w = Tensor::zeros(&[5, 5, 1, 1]).unwrap();
        assert!(conv2d(&x, &w, (1, 1), (1, 1)).is_err());
    }

    #[test]
    fn conv1d_shapes_and_averaging() {
        let w = Tensor::constant(&[3, 1, 1], vec![1.0 / 3.0; 3]).unwrap();
        let x = Tensor::constant(&[96, 1], vec![2.5; 96]).unwrap();
        let y = conv1d(&x, &w, 2, 1).unwrap();
        assert_eq!(y.shape(), &[48, 1]);
        let same = conv1d(&x, &w, 1, 1).unwrap();
        for v in &same.data()[1..95] {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }
}
