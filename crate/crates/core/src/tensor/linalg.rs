use super::{Result, Tensor, TensorError};

// Row-major kernels. `c` is accumulated into.

/// c[n,m] += a[n,k] * b[k,m]
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// c[n,m] += a[n,k] * b[m,k]^T
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            c[i * m + j] += dot;
        }
    }
}

/// c[k,m] += a[n,k]^T * b[n,m]
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * m..(p + 1) * m];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Rank-2 matrix product with gradients `dA = dC·Bᵀ`, `dB = Aᵀ·dC`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    batched(a, b, 1, n, k, m, vec![n, m], "matmul")
}

/// Batched product `[B,n,k] x [B,k,m] -> [B,n,m]`.
pub fn bmm(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 3
        || b.rank() != 3
        || a.shape()[0] != b.shape()[0]
        || a.shape()[2] != b.shape()[1]
    {
        return Err(TensorError::ShapeMismatch {
            op: "bmm",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (bs, n, k, m) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
    batched(a, b, bs, n, k, m, vec![bs, n, m], "bmm")
}

#[allow(clippy::too_many_arguments)]
fn batched(
    a: &Tensor,
    b: &Tensor,
    bs: usize,
    n: usize,
    k: usize,
    m: usize,
    shape: Vec<usize>,
    name: &'static str,
) -> Result<Tensor> {
    let av = a.to_vec();
    let bv = b.to_vec();
    let mut out = vec![0.0; bs * n * m];
    for s in 0..bs {
        gemm_nn(
            &av[s * n * k..(s + 1) * n * k],
            &bv[s * k * m..(s + 1) * k * m],
            &mut out[s * n * m..(s + 1) * n * m],
            n,
            k,
            m,
        );
    }
    let (need_a, need_b) = (a.requires_grad(), b.requires_grad());
    Ok(Tensor::from_op(
        name,
        shape,
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let ga = need_a.then(|| {
                let mut ga = vec![0.0; bs * n * k];
                for s in 0..bs {
                    gemm_nt(
                        &g[s * n * m..(s + 1) * n * m],
                        &bv[s * k * m..(s + 1) * k * m],
                        &mut ga[s * n * k..(s + 1) * n * k],
                        n,
                        m,
                        k,
                    );
                }
                ga
            });
            let gb = need_b.then(|| {
                let mut gb = vec![0.0; bs * k * m];
                for s in 0..bs {
                    gemm_tn(
                        &av[s * n * k..(s + 1) * n * k],
                        &g[s * n * m..(s + 1) * n * m],
                        &mut gb[s * k * m..(s + 1) * k * m],
                        n,
                        k,
                        m,
                    );
                }
                gb
            });
            vec![ga, gb]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_hand_product() {
        let a = Tensor::constant(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let eye = Tensor::constant(&[2, 2], vec![1., 0., 0., 1.]).unwrap();
        assert_eq!(matmul(&a, &eye).unwrap().to_vec(), a.to_vec());
        let v = Tensor::constant(&[2, 1], vec![5., 6.]).unwrap();
        assert_eq!(matmul(&a, &v).unwrap().to_vec(), vec![17., 39.]);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        assert!(matmul(&a, &a).is_err());
    }

    #[test]
    fn bmm_matches_per_batch_matmul() {
        let a = Tensor::constant(&[2, 2, 3], (0..12).map(f64::from).collect()).unwrap();
        let b = Tensor::constant(&[2, 3, 1], (0..6).map(f64::from).collect()).unwrap();
        let c = bmm(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 2, 1]);
        // batch 0: [[0,1,2],[3,4,5]]·[0,1,2] = [5, 14]
        // batch 1: [[6,7,8],[9,10,11]]·[3,4,5] = [86, 122]
        assert_eq!(c.to_vec(), vec![5., 14., 86., 122.]);
    }
}
