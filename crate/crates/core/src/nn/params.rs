use std::str::FromStr;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Tensor, TensorError};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform in ±sqrt(1/fan_in), fan_in = product of all but the last extent.
    UniformFanIn,
    Zeros,
    Ones,
    /// `[k, ch, ch]` kernel with 1/k on the channel diagonal.
    MovingAverage,
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-fan-in" => Ok(InitScheme::UniformFanIn),
            "zeros" => Ok(InitScheme::Zeros),
            "ones" => Ok(InitScheme::Ones),
            "moving-average" => Ok(InitScheme::MovingAverage),
            other => Err(Error::Invalid(format!("unknown init scheme {other:?}"))),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Stream keyed by `(seed, name)`: adding a parameter never shifts the
/// draws of another.
pub(crate) fn keyed_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(name.as_bytes()).to_le_bytes());
    key[16..24].copy_from_slice(&(name.len() as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Creates a deterministic parameter leaf.
pub fn init_params(name: &str, shape: &[usize], scheme: InitScheme, seed: u64) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data = match scheme {
        InitScheme::Zeros => vec![0.0; n],
        InitScheme::Ones => vec![1.0; n],
        InitScheme::UniformFanIn => {
            let fan_in: usize = shape[..shape.len().saturating_sub(1)]
                .iter()
                .product::<usize>()
                .max(1);
            let bound = (1.0 / fan_in as f64).sqrt();
            let mut rng = keyed_rng(seed, name);
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        }
        InitScheme::MovingAverage => {
            let &[k, ci, co] = shape else {
                return Err(Error::Invalid(format!(
                    "moving-average init needs a [k, ch, ch] shape, got {shape:?}"
                )));
            };
            let mut data = vec![0.0; n];
            for j in 0..k {
                for c in 0..ci.min(co) {
                    data[(j * ci + c) * co + c] = 1.0 / k as f64;
                }
            }
            data
        }
    };
    Ok(Tensor::param(shape, data)?)
}

/// Named parameters in insertion order.
#[derive(Default, Clone, Debug)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            params: IndexMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Registers a new parameter; names must be unique.
    pub fn create(&mut self, name: &str, shape: &[usize], scheme: InitScheme) -> Result<Tensor> {
        if self.params.contains_key(name) {
            return Err(Error::Invalid(format!("duplicate parameter name {name:?}")));
        }
        let t = init_params(name, shape, scheme, self.seed)?;
        self.params.insert(name.to_string(), t.clone());
        Ok(t)
    }

    /// Registers an existing tensor under `name`.
    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Invalid(format!("duplicate parameter name {name:?}")));
        }
        self.params.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.params.values().for_each(Tensor::zero_grad);
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.values().map(Tensor::to_vec).collect()
    }

    pub fn restore(&self, values: &[Vec<f64>]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Invalid(format!(
                "snapshot has {} entries, store has {}",
                values.len(),
                self.params.len()
            )));
        }
        for (t, v) in self.params.values().zip(values) {
            t.set_data(v)?;
        }
        Ok(())
    }

    /// Overwrites one parameter's values; shape must match exactly.
    pub fn assign(&self, name: &str, shape: &[usize], values: &[f64]) -> Result<()> {
        let t = self
            .params
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter {name:?}")))?;
        if t.shape() != shape {
            return Err(TensorError::ShapeMismatch {
                op: "assign",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            }
            .into());
        }
        t.set_data(values)?;
        Ok(())
    }
}
