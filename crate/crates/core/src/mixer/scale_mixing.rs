use super::unfold_image;
use crate::nn::{InitScheme, ParamStore};
use crate::tensor::{conv2d, conv_transpose2d, gelu, Tensor};
use crate::{Error, Result};

/// 3×3 kernel plus bias, NHWC layout `[3, 3, d, d]`.
#[derive(Clone, Debug)]
struct Kernel {
    weight: Tensor,
    bias: Tensor,
}

impl Kernel {
    fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(Kernel {
            weight: store.create(
                &format!("{name}.weight"),
                &[3, 3, d, d],
                InitScheme::UniformFanIn,
            )?,
            bias: store.create(&format!("{name}.bias"), &[d], InitScheme::Zeros)?,
        })
    }

    fn conv(&self, x: &Tensor, stride: (usize, usize)) -> Result<Tensor> {
        Ok(conv2d(x, &self.weight, stride, (1, 1))?.add(&self.bias)?)
    }

    fn conv_t(&self, x: &Tensor, stride: (usize, usize)) -> Result<Tensor> {
        Ok(conv_transpose2d(x, &self.weight, stride, (1, 1))?.add(&self.bias)?)
    }
}

/// Bottom-up seasonal and top-down trend mixing across scales.
#[derive(Clone, Debug)]
pub struct ScaleMixing {
    season_down: Kernel,
    season_refine: Kernel,
    trend_up: Kernel,
    trend_refine: Kernel,
}

fn column_axis(t: &Tensor) -> usize {
    t.rank() - 2
}

fn check_images(images: &[Tensor]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::Invalid(
            "scale mixing needs at least one image".into(),
        ));
    }
    let rank = images[0].rank();
    if rank != 3 && rank != 4 {
        return Err(Error::Invalid(format!(
            "expected image tensors, got rank {rank}"
        )));
    }
    let rows = images[0].shape()[rank - 3];
    if images
        .iter()
        .any(|t| t.rank() != rank || t.shape()[rank - 3] != rows)
    {
        return Err(Error::Invalid(
            "images across scales must share the period".into(),
        ));
    }
    Ok(())
}

impl ScaleMixing {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize) -> Result<Self> {
        Ok(ScaleMixing {
            season_down: Kernel::new(store, &format!("{name}.season.0"), d_model)?,
            season_refine: Kernel::new(store, &format!("{name}.season.1"), d_model)?,
            trend_up: Kernel::new(store, &format!("{name}.trend.0"), d_model)?,
            trend_refine: Kernel::new(store, &format!("{name}.trend.1"), d_model)?,
        })
    }

    /// `s_m ← s_m + Conv(s_{m-1})` for `m = 1..=M`, using the updated `s_{m-1}`.
    pub fn mix_seasonal_bottom_up(&self, seasonal: &[Tensor]) -> Result<Vec<Tensor>> {
        check_images(seasonal)?;
        let mut out: Vec<Tensor> = Vec::with_capacity(seasonal.len());
        out.push(seasonal[0].clone());
        for s in &seasonal[1..] {
            let prev = out.last().expect("nonempty");
            let h = gelu(&self.season_down.conv(prev, (1, 2))?);
            let h = self.season_refine.conv(&h, (1, 1))?;
            let axis = column_axis(s);
            out.push(s.add(&h.fit_axis(axis, s.shape()[axis])?)?);
        }
        Ok(out)
    }

    /// `t_m ← t_m + TransConv(t_{m+1})` for `m = M-1..=0`, using the updated `t_{m+1}`.
    pub fn mix_trend_top_down(&self, trend: &[Tensor]) -> Result<Vec<Tensor>> {
        check_images(trend)?;
        let mut out = trend.to_vec();
        for m in (0..trend.len() - 1).rev() {
            let h = gelu(&self.trend_up.conv_t(&out[m + 1], (1, 2))?);
            let h = self.trend_refine.conv_t(&h, (1, 1))?;
            let axis = column_axis(&out[m]);
            out[m] = out[m].add(&h.fit_axis(axis, out[m].shape()[axis])?)?;
        }
        Ok(out)
    }
}

/// `unfold(s + t)` truncated to the scale's original length.
pub fn merge_and_unfold(seasonal: &Tensor, trend: &Tensor, target_len: usize) -> Result<Tensor> {
    unfold_image(&seasonal.add(trend)?, target_len)
}
