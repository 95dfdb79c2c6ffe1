use crate::spectral::PeriodSpectrum;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Representations `x_0 … x_M`, level `m` holding `⌊T/2^m⌋` time steps.
/// Levels are `[len, ch]` or batched `[batch, len, ch]`.
#[derive(Clone, Debug)]
pub struct MultiScaleSeries {
    pub levels: Vec<Tensor>,
}

impl MultiScaleSeries {
    pub fn new(levels: Vec<Tensor>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Invalid(
                "multi-scale series needs at least one level".into(),
            ));
        }
        let rank = levels[0].rank();
        let time_axis = rank - 2;
        for pair in levels.windows(2) {
            let (a, b) = (pair[0].shape()[time_axis], pair[1].shape()[time_axis]);
            if pair[1].rank() != rank || b != a / 2 {
                return Err(Error::Invalid(format!(
                    "level lengths must halve: {a} then {b}"
                )));
            }
        }
        Ok(MultiScaleSeries { levels })
    }

    /// Number of downsampling steps `M`.
    pub fn scales(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn len_at(&self, m: usize) -> usize {
        let t = &self.levels[m];
        t.shape()[t.rank() - 2]
    }

    pub fn coarsest(&self) -> &Tensor {
        self.levels.last().expect("nonempty")
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.levels.iter().map(|t| t.shape().to_vec()).collect()
    }
}

/// A `[p, f, d]` (or `[batch, p, f, d]`) folding of one scale at one period.
/// Time step `t` lives at row `t mod p`, column `t / p`.
#[derive(Clone, Debug)]
pub struct TimeImage {
    pub data: Tensor,
    pub scale: usize,
    pub resolution: usize,
    pub source_len: usize,
}

impl TimeImage {
    fn axes(&self) -> (usize, usize) {
        let s = self.data.shape();
        let r = s.len();
        (s[r - 3], s[r - 2])
    }

    pub fn period(&self) -> usize {
        self.axes().0
    }

    pub fn columns(&self) -> usize {
        self.axes().1
    }
}

fn lift(rep: &Tensor) -> Result<(Tensor, bool)> {
    match *rep.shape() {
        [l, d] => Ok((rep.reshape(&[1, l, d])?, false)),
        [_, _, _] => Ok((rep.clone(), true)),
        _ => Err(Error::Invalid(format!(
            "expected [len, d] or [batch, len, d], got {:?}",
            rep.shape()
        ))),
    }
}

/// Zero-pads to `p·⌈L/p⌉` and folds into a `p × ⌈L/p⌉` image.
pub fn fold_to_image(
    rep: &Tensor,
    period: usize,
    scale: usize,
    resolution: usize,
) -> Result<TimeImage> {
    if period == 0 {
        return Err(Error::Invalid(
            "fold_to_image: period must be at least 1".into(),
        ));
    }
    let (x, batched) = lift(rep)?;
    let &[b, len, d] = x.shape() else {
        unreachable!()
    };
    let cols = len.div_ceil(period);
    let img = x
        .pad_axis(1, 0, period * cols - len)?
        .reshape(&[b, cols, period, d])?
        .permute(&[0, 2, 1, 3])?;
    let data = if batched {
        img
    } else {
        img.reshape(&[period, cols, d])?
    };
    Ok(TimeImage {
        data,
        scale,
        resolution,
        source_len: len,
    })
}

/// Inverse traversal of [`fold_to_image`], truncated to `target_len`.
pub fn unfold_image(img: &Tensor, target_len: usize) -> Result<Tensor> {
    let (x, batched) = match *img.shape() {
        [p, f, d] => (img.reshape(&[1, p, f, d])?, false),
        [_, _, _, _] => (img.clone(), true),
        _ => {
            return Err(Error::Invalid(format!(
                "unfold_image expects [p, f, d] or [batch, p, f, d], got {:?}",
                img.shape()
            )))
        }
    };
    let &[b, p, f, d] = x.shape() else {
        unreachable!()
    };
    if target_len == 0 || target_len > p * f {
        return Err(Error::Invalid(format!(
            "unfold_image: target length {target_len} exceeds capacity {}",
            p * f
        )));
    }
    let series = x
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b, p * f, d])?
        .slice_axis(1, 0, target_len)?;
    if batched {
        Ok(series)
    } else {
        Ok(series.reshape(&[target_len, d])?)
    }
}

/// `(M+1) × K` images: entry `[m][k]` folds scale `m` at period `p_k`.
pub fn mrti(levels: &MultiScaleSeries, spectrum: &PeriodSpectrum) -> Result<Vec<Vec<TimeImage>>> {
    if spectrum.is_empty() {
        return Err(Error::Invalid("mrti: empty period spectrum".into()));
    }
    levels
        .levels
        .iter()
        .enumerate()
        .map(|(m, rep)| {
            spectrum
                .entries
                .iter()
                .enumerate()
                .map(|(k, e)| fold_to_image(rep, e.period, m, k))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(vals: &[f64]) -> Tensor {
        Tensor::constant(&[vals.len(), 1], vals.to_vec()).unwrap()
    }

    #[test]
    fn layout_is_column_per_period() {
        let img = fold_to_image(&series(&[1., 2., 3., 4., 5., 6.]), 3, 0, 0).unwrap();
        assert_eq!(img.data.shape(), &[3, 2, 1]);
        assert_eq!(img.data.to_vec(), vec![1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn padding_cells_are_zero() {
        let img = fold_to_image(&series(&[1., 2., 3., 4., 5.]), 3, 0, 0).unwrap();
        assert_eq!((img.period(), img.columns()), (3, 2));
        // cell (row 2, column 1)
        assert_eq!(img.data.data()[2 * 2 + 1], 0.0);
    }

    #[test]
    fn unit_period_is_a_single_row() {
        let img = fold_to_image(&series(&[1., 2., 3., 4.]), 1, 0, 0).unwrap();
        assert_eq!(img.data.shape(), &[1, 4, 1]);
        assert_eq!(img.data.to_vec(), vec![1., 2., 3., 4.]);
    }

    #[test]
    fn unfold_truncates_and_checks_capacity() {
        let img = fold_to_image(&series(&[1., 2., 3., 4., 5., 6.]), 3, 0, 0).unwrap();
        assert_eq!(
            unfold_image(&img.data, 5).unwrap().to_vec(),
            vec![1., 2., 3., 4., 5.]
        );
        assert!(unfold_image(&img.data, 7).is_err());
    }
}
