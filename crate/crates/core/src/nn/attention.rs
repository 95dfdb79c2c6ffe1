use super::{Linear, ParamStore};
use crate::tensor::{bmm, softmax, Tensor};
use crate::{Error, Result};

pub struct AttentionOutput {
    /// `[batch, tokens, dim]`
    pub output: Tensor,
    /// Attention weights `[batch·heads, tokens, tokens]`; rows sum to 1.
    pub weights: Tensor,
}

fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let &[b, n, d] = x.shape() else {
        unreachable!()
    };
    if heads == 1 {
        return Ok(x.clone());
    }
    Ok(x.reshape(&[b, n, heads, d / heads])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b * heads, n, d / heads])?)
}

fn merge_heads(x: &Tensor, batch: usize, heads: usize) -> Result<Tensor> {
    if heads == 1 {
        return Ok(x.clone());
    }
    let &[_, n, dh] = x.shape() else {
        unreachable!()
    };
    Ok(x.reshape(&[batch, heads, n, dh])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[batch, n, heads * dh])?)
}

/// `softmax(Q·Kᵀ/√d_head)·V` per head over `[batch, tokens, dim]` inputs.
pub fn scaled_dot_product_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
) -> Result<AttentionOutput> {
    let &[b, n, d] = q.shape() else {
        return Err(Error::Invalid(format!(
            "attention expects [batch, tokens, dim], got {:?}",
            q.shape()
        )));
    };
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(Error::Invalid(format!(
            "attention q/k/v shapes differ: {:?} {:?} {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Invalid(format!(
            "feature dim {d} not divisible by {heads} heads"
        )));
    }
    let dh = d / heads;
    let qh = split_heads(q, heads)?;
    let kt = split_heads(k, heads)?.transpose(1, 2)?;
    let vh = split_heads(v, heads)?;
    let scores = bmm(&qh, &kt)?.scale(1.0 / (dh as f64).sqrt());
    let weights = softmax(&scores, 2)?;
    let out = bmm(&weights, &vh)?;
    debug_assert_eq!(out.shape(), &[b * heads, n, dh]);
    Ok(AttentionOutput {
        output: merge_heads(&out, b, heads)?,
        weights,
    })
}

/// Linear Q/K/V projections, multi-head attention, output projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    /// Projects `in_dim` tokens to `attn_dim` for attention and back to `out_dim`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        attn_dim: usize,
        out_dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !attn_dim.is_multiple_of(heads) {
            return Err(Error::Invalid(format!(
                "{name}: attention dim {attn_dim} not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.query"), in_dim, attn_dim)?,
            key: Linear::new(store, &format!("{name}.key"), in_dim, attn_dim)?,
            value: Linear::new(store, &format!("{name}.value"), in_dim, attn_dim)?,
            output: Linear::new(store, &format!("{name}.output"), attn_dim, out_dim)?,
            heads,
        })
    }

    /// Tokens are `[batch, tokens, in_dim]` or unbatched `[tokens, in_dim]`.
    pub fn forward(
        &self,
        q_tokens: &Tensor,
        k_tokens: &Tensor,
        v_tokens: &Tensor,
    ) -> Result<AttentionOutput> {
        let unbatched = q_tokens.rank() == 2;
        let lift = |t: &Tensor| -> Result<Tensor> {
            if t.rank() == 2 {
                Ok(t.reshape(&[1, t.shape()[0], t.shape()[1]])?)
            } else {
                Ok(t.clone())
            }
        };
        let q = self.query.forward(&lift(q_tokens)?)?;
        let k = self.key.forward(&lift(k_tokens)?)?;
        let v = self.value.forward(&lift(v_tokens)?)?;
        let attn = scaled_dot_product_attention(&q, &k, &v, self.heads)?;
        let mut output = self.output.forward(&attn.output)?;
        if unbatched {
            let s = output.shape().to_vec();
            output = output.reshape(&s[1..])?;
        }
        Ok(AttentionOutput {
            output,
            weights: attn.weights,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::constant(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn rows_sum_to_one() {
        let mut store = ParamStore::new(1);
        let mha = MultiHeadAttention::new(&mut store, "a", 6, 8, 6, 4).unwrap();
        let x = random(&[3, 5, 6], 2);
        let out = mha.forward(&x, &x, &x).unwrap();
        assert_eq!(out.output.shape(), &[3, 5, 6]);
        assert_eq!(out.weights.shape(), &[12, 5, 5]);
        for row in out.weights.data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_returns_projected_value() {
        let mut store = ParamStore::new(1);
        let mha = MultiHeadAttention::new(&mut store, "a", 4, 4, 4, 2).unwrap();
        let x = random(&[1, 4], 3);
        let out = mha.forward(&x, &x, &x).unwrap();
        let expected = mha.output.forward(&mha.value.forward(&x).unwrap()).unwrap();
        for (a, b) in out.output.to_vec().iter().zip(expected.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_tokens_give_identical_rows() {
        let mut store = ParamStore::new(1);
        let mha = MultiHeadAttention::new(&mut store, "a", 4, 4, 4, 4).unwrap();
        let row = random(&[1, 4], 5).to_vec();
        let x = Tensor::constant(&[2, 4], [row.clone(), row].concat()).unwrap();
        let y = mha.forward(&x, &x, &x).unwrap().output.to_vec();
        assert_eq!(y[..4], y[4..]);
    }

    #[test]
    fn indivisible_heads() {
        let mut store = ParamStore::new(1);
        assert!(MultiHeadAttention::new(&mut store, "a", 4, 6, 4, 4).is_err());
    }
}
