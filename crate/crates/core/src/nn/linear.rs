use super::{InitScheme, ParamStore};
use crate::tensor::{matmul, Tensor, TensorError};
use crate::Result;

/// `x·W + b` over the last axis. Parameters live in the store as
/// `{name}.weight` `[in, out]` and `{name}.bias` `[out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Linear> {
        Ok(Linear {
            weight: store.create(
                &format!("{name}.weight"),
                &[in_dim, out_dim],
                InitScheme::UniformFanIn,
            )?,
            bias: store.create(&format!("{name}.bias"), &[out_dim], InitScheme::Zeros)?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let in_dim = self.in_dim();
        if x.shape().last() != Some(&in_dim) {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: x.shape().to_vec(),
                rhs: self.weight.shape().to_vec(),
            }
            .into());
        }
        let rows = x.numel() / in_dim;
        let y = matmul(&x.reshape(&[rows, in_dim])?, &self.weight)?.add(&self.bias)?;
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = self.out_dim();
        Ok(y.reshape(&shape)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_arithmetic_and_shape() {
        let mut store = ParamStore::new(0);
        let lin = Linear::new(&mut store, "l", 2, 1).unwrap();
        store.assign("l.weight", &[2, 1], &[1.0, 1.0]).unwrap();
        store.assign("l.bias", &[1], &[1.0]).unwrap();
        let x = Tensor::constant(&[2], vec![2.0, 3.0]).unwrap();
        assert_eq!(lin.forward(&x).unwrap().to_vec(), vec![6.0]);
        let xb = Tensor::zeros(&[4, 5, 2]).unwrap();
        assert_eq!(lin.forward(&xb).unwrap().shape(), &[4, 5, 1]);
        assert!(lin.forward(&Tensor::zeros(&[3]).unwrap()).is_err());
    }

    #[test]
    fn identity_weights() {
        let mut store = ParamStore::new(0);
        let lin = Linear::new(&mut store, "id", 3, 3).unwrap();
        store
            .assign("id.weight", &[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.])
            .unwrap();
        let x = Tensor::constant(&[2, 3], vec![1., -2., 3., 4., 5., -6.]).unwrap();
        assert_eq!(lin.forward(&x).unwrap().to_vec(), x.to_vec());
    }
}
