use super::TimeImage;
use crate::nn::{scaled_dot_product_attention, InitScheme, Linear, ParamStore};
use crate::tensor::{conv2d, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionAxis {
    /// Tokens are the columns (period segments); rows are batched.
    Column,
    /// Tokens are the rows (phase positions); columns are batched.
    Row,
}

/// Attention along one image axis with Q/K/V from a shared 2-D convolution.
#[derive(Clone, Debug)]
pub struct AxisAttention {
    /// `[k, k, d, 3d]`, output channels ordered Q | K | V.
    pub qkv_weight: Tensor,
    pub qkv_bias: Tensor,
    pub output: Linear,
    pub heads: usize,
    pub axis: AttentionAxis,
}

impl AxisAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        kernel: usize,
        axis: AttentionAxis,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Invalid(format!(
                "Q/K/V kernel must be odd, got {kernel}"
            )));
        }
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Invalid(format!(
                "d_model {d_model} not divisible by {heads} heads"
            )));
        }
        Ok(AxisAttention {
            qkv_weight: store.create(
                &format!("{name}.qkv.weight"),
                &[kernel, kernel, d_model, 3 * d_model],
                InitScheme::UniformFanIn,
            )?,
            qkv_bias: store.create(
                &format!("{name}.qkv.bias"),
                &[3 * d_model],
                InitScheme::Zeros,
            )?,
            output: Linear::new(store, &format!("{name}.output"), d_model, d_model)?,
            heads,
            axis,
        })
    }

    /// Maps an image `[p, f, d]` or `[batch, p, f, d]` to the same shape.
    pub fn forward(&self, img: &Tensor) -> Result<Tensor> {
        let (x, batched) = match *img.shape() {
            [p, f, d] => (img.reshape(&[1, p, f, d])?, false),
            [_, _, _, _] => (img.clone(), true),
            _ => {
                return Err(Error::Invalid(format!(
                    "axis attention expects an image, got {:?}",
                    img.shape()
                )))
            }
        };
        let &[b, p, f, d] = x.shape() else {
            unreachable!()
        };
        let k = self.qkv_weight.shape()[0];
        let qkv = conv2d(&x, &self.qkv_weight, (1, 1), (k / 2, k / 2))?.add(&self.qkv_bias)?;
        let part = |i: usize| qkv.slice_axis(3, i * d, (i + 1) * d);
        let (q, kk, v) = (part(0)?, part(1)?, part(2)?);
        let out = match self.axis {
            AttentionAxis::Column => {
                let tok = |t: &Tensor| t.reshape(&[b * p, f, d]);
                let a = scaled_dot_product_attention(&tok(&q)?, &tok(&kk)?, &tok(&v)?, self.heads)?;
                self.output.forward(&a.output)?.reshape(&[b, p, f, d])?
            }
            AttentionAxis::Row => {
                let tok = |t: &Tensor| t.permute(&[0, 2, 1, 3])?.reshape(&[b * f, p, d]);
                let a = scaled_dot_product_attention(&tok(&q)?, &tok(&kk)?, &tok(&v)?, self.heads)?;
                self.output
                    .forward(&a.output)?
                    .reshape(&[b, f, p, d])?
                    .permute(&[0, 2, 1, 3])?
            }
        };
        if batched {
            Ok(out)
        } else {
            Ok(out.reshape(&[p, f, d])?)
        }
    }
}

/// Seasonal and trend images of identical shape.
#[derive(Clone, Debug)]
pub struct DecomposedImage {
    pub seasonal: Tensor,
    pub trend: Tensor,
}

/// Column attention yields the seasonal image, row attention the trend image.
/// One instance is shared by every image of a block.
#[derive(Clone, Debug)]
pub struct TimeImageDecomposition {
    pub column: AxisAttention,
    pub row: AxisAttention,
}

impl TimeImageDecomposition {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        kernel: usize,
    ) -> Result<Self> {
        Ok(TimeImageDecomposition {
            column: AxisAttention::new(
                store,
                &format!("{name}.col"),
                d_model,
                heads,
                kernel,
                AttentionAxis::Column,
            )?,
            row: AxisAttention::new(
                store,
                &format!("{name}.row"),
                d_model,
                heads,
                kernel,
                AttentionAxis::Row,
            )?,
        })
    }

    pub fn decompose(&self, img: &TimeImage) -> Result<DecomposedImage> {
        Ok(DecomposedImage {
            seasonal: self.column.forward(&img.data)?,
            trend: self.row.forward(&img.data)?,
        })
    }
}
