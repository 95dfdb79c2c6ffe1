use super::{numel_of, Result, Tensor, TensorError};

/// Numpy-style broadcast of two shapes, aligned at the trailing axis.
fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() {
            1
        } else {
            a[i - (rank - a.len())]
        };
        let db = if i < rank - b.len() {
            1
        } else {
            b[i - (rank - b.len())]
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out`, the flat index of the broadcast source.
/// `None` when the source already has the output shape.
fn source_map(src: &[usize], out: &[usize]) -> Option<Vec<usize>> {
    if src == out {
        return None;
    }
    let n = numel_of(out);
    let ns = numel_of(src);
    // Fast path: source equals a trailing block of the output.
    let lead = out.len() - src.len();
    if src == &out[lead..] {
        return Some((0..n).map(|i| i % ns).collect());
    }
    let mut strides = vec![0usize; out.len()];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        if src[i] != 1 {
            strides[lead + i] = acc;
        }
        acc *= src[i];
    }
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out.len()];
    let mut cur = 0usize;
    for _ in 0..n {
        map.push(cur);
        for ax in (0..out.len()).rev() {
            idx[ax] += 1;
            cur += strides[ax];
            if idx[ax] < out[ax] {
                break;
            }
            cur -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Some(map)
}

fn reduce_to(
    g: &[f64],
    map: &Option<Vec<usize>>,
    len: usize,
    scale: impl Fn(usize) -> f64,
) -> Vec<f64> {
    match map {
        None => g.iter().enumerate().map(|(i, v)| v * scale(i)).collect(),
        Some(m) => {
            let mut out = vec![0.0; len];
            for (i, (&gi, &j)) in g.iter().zip(m).enumerate() {
                out[j] += gi * scale(i);
            }
            out
        }
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }
}

fn binary(op: Binary, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape =
        broadcast_shapes(a.shape(), b.shape()).ok_or_else(|| TensorError::ShapeMismatch {
            op: op.name(),
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })?;
    let amap = source_map(a.shape(), &shape);
    let bmap = source_map(b.shape(), &shape);
    let n = numel_of(&shape);
    let (ad, bd) = (a.data(), b.data());
    let at = |i: usize| match &amap {
        Some(m) => ad[m[i]],
        None => ad[i],
    };
    let bt = |i: usize| match &bmap {
        Some(m) => bd[m[i]],
        None => bd[i],
    };
    let data: Vec<f64> = match op {
        Binary::Add => (0..n).map(|i| at(i) + bt(i)).collect(),
        Binary::Sub => (0..n).map(|i| at(i) - bt(i)).collect(),
        Binary::Mul => (0..n).map(|i| at(i) * bt(i)).collect(),
        Binary::Div => (0..n).map(|i| at(i) / bt(i)).collect(),
    };
    let (na, nb) = (a.numel(), b.numel());
    let (a_vals, b_vals) = match op {
        Binary::Mul | Binary::Div => (Some(ad.to_vec()), Some(bd.to_vec())),
        _ => (None, None),
    };
    drop((ad, bd));
    let (need_a, need_b) = (a.requires_grad(), b.requires_grad());
    let backward = Box::new(move |g: &[f64]| {
        let av = |i: usize| {
            let v = a_vals.as_ref().unwrap();
            match &amap {
                Some(m) => v[m[i]],
                None => v[i],
            }
        };
        let bv = |i: usize| {
            let v = b_vals.as_ref().unwrap();
            match &bmap {
                Some(m) => v[m[i]],
                None => v[i],
            }
        };
        let ga = need_a.then(|| match op {
            Binary::Add | Binary::Sub => reduce_to(g, &amap, na, |_| 1.0),
            Binary::Mul => reduce_to(g, &amap, na, bv),
            Binary::Div => reduce_to(g, &amap, na, |i| 1.0 / bv(i)),
        });
        let gb = need_b.then(|| match op {
            Binary::Add => reduce_to(g, &bmap, nb, |_| 1.0),
            Binary::Sub => reduce_to(g, &bmap, nb, |_| -1.0),
            Binary::Mul => reduce_to(g, &bmap, nb, av),
            Binary::Div => reduce_to(g, &bmap, nb, |i| {
                let b = bv(i);
                -av(i) / (b * b)
            }),
        });
        vec![ga, gb]
    });
    Ok(Tensor::from_op(
        op.name(),
        shape,
        data,
        vec![a.clone(), b.clone()],
        backward,
    ))
}

/// Axis view helper: `(outer, extent, inner)` around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel_of(&shape[..axis]);
    let inner = numel_of(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        Err(TensorError::AxisOutOfRange { op, axis, rank })
    } else {
        Ok(())
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Mul, self, other)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Div, self, other)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * s).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.iter().map(|v| v * s).collect())]),
        )
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        let data = self.data().iter().map(|v| v + s).collect();
        Tensor::from_op(
            "add_scalar",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn square(&self) -> Tensor {
        let x = self.to_vec();
        let data = x.iter().map(|v| v * v).collect();
        Tensor::from_op(
            "square",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.iter().zip(&x).map(|(g, x)| 2.0 * g * x).collect())]),
        )
    }

    pub fn exp(&self) -> Tensor {
        let y: Vec<f64> = self.data().iter().map(|v| v.exp()).collect();
        let saved = y.clone();
        Tensor::from_op(
            "exp",
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.iter().zip(&saved).map(|(g, y)| g * y).collect())]),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroExtent(shape.to_vec()));
        }
        if numel_of(shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank
            || axes
                .iter()
                .any(|&a| a >= rank || std::mem::replace(&mut seen[a], true))
        {
            return Err(TensorError::Invalid(format!(
                "permute: {axes:?} is not a permutation of rank {rank}"
            )));
        }
        let in_shape = self.shape();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let mut in_strides = vec![1usize; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
        }
        let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let n = self.numel();
        let mut map = Vec::with_capacity(n);
        let mut idx = vec![0usize; rank];
        let mut cur = 0usize;
        for _ in 0..n {
            map.push(cur);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                cur += strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                cur -= strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        let x = self.data();
        let data = map.iter().map(|&j| x[j]).collect();
        drop(x);
        Ok(Tensor::from_op(
            "permute",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; n];
                for (&gi, &j) in g.iter().zip(&map) {
                    gx[j] = gi;
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Swaps two axes.
    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor> {
        check_axis("transpose", a.max(b), self.rank())?;
        let mut axes: Vec<usize> = (0..self.rank()).collect();
        axes.swap(a, b);
        self.permute(&axes)
    }

    /// Zero-pads `axis` with `before` leading and `after` trailing entries.
    pub fn pad_axis(&self, axis: usize, before: usize, after: usize) -> Result<Tensor> {
        check_axis("pad_axis", axis, self.rank())?;
        if before == 0 && after == 0 {
            return Ok(self.clone());
        }
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        let m = n + before + after;
        let mut shape = self.shape().to_vec();
        shape[axis] = m;
        let x = self.data();
        let mut data = vec![0.0; outer * m * inner];
        for o in 0..outer {
            let src = &x[o * n * inner..(o + 1) * n * inner];
            let dst = (o * m + before) * inner;
            data[dst..dst + n * inner].copy_from_slice(src);
        }
        drop(x);
        Ok(Tensor::from_op(
            "pad",
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    let s = (o * m + before) * inner;
                    gx.extend_from_slice(&g[s..s + n * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Keeps indices `start..end` of `axis`.
    pub fn slice_axis(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        check_axis("slice_axis", axis, self.rank())?;
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        if start >= end || end > n {
            return Err(TensorError::SliceOutOfRange {
                start,
                end,
                extent: n,
            });
        }
        if start == 0 && end == n {
            return Ok(self.clone());
        }
        let m = end - start;
        let mut shape = self.shape().to_vec();
        shape[axis] = m;
        let x = self.data();
        let mut data = Vec::with_capacity(outer * m * inner);
        for o in 0..outer {
            let s = (o * n + start) * inner;
            data.extend_from_slice(&x[s..s + m * inner]);
        }
        drop(x);
        Ok(Tensor::from_op(
            "slice",
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let s = (o * n + start) * inner;
                    gx[s..s + m * inner].copy_from_slice(&g[o * m * inner..(o + 1) * m * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Crops or zero-pads the trailing end of `axis` to `target` entries.
    pub fn fit_axis(&self, axis: usize, target: usize) -> Result<Tensor> {
        check_axis("fit_axis", axis, self.rank())?;
        let n = self.shape()[axis];
        match n.cmp(&target) {
            std::cmp::Ordering::Equal => Ok(self.clone()),
            std::cmp::Ordering::Greater => self.slice_axis(axis, 0, target),
            std::cmp::Ordering::Less => self.pad_axis(axis, 0, target - n),
        }
    }

    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        let s = self.data().iter().sum();
        Tensor::from_op(
            "sum",
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        self.sum().scale(1.0 / n as f64)
    }

    /// Sums over `axis`; the axis is removed unless `keepdim`.
    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        check_axis("sum_axis", axis, self.rank())?;
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        let mut shape = self.shape().to_vec();
        if keepdim || shape.len() == 1 {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        let x = self.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            let acc = &mut data[o * inner..(o + 1) * inner];
            for k in 0..n {
                let row = &x[(o * n + k) * inner..(o * n + k + 1) * inner];
                acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            "sum_axis",
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    for _ in 0..n {
                        gx.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        check_axis("mean_axis", axis, self.rank())?;
        let n = self.shape()[axis];
        Ok(self.sum_axis(axis, keepdim)?.scale(1.0 / n as f64))
    }
}

/// Joins tensors along `axis`; all other extents must agree.
pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
    let first = tensors
        .first()
        .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
    check_axis("concat", axis, first.rank())?;
    for t in &tensors[1..] {
        let ok = t.rank() == first.rank()
            && t.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
    }
    let (outer, _, inner) = split_at_axis(first.shape(), axis);
    let extents: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
    let total: usize = extents.iter().sum();
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let mut data = Vec::with_capacity(outer * total * inner);
    let views: Vec<_> = tensors.iter().map(|t| t.data()).collect();
    for o in 0..outer {
        for (v, &n) in views.iter().zip(&extents) {
            data.extend_from_slice(&v[o * n * inner..(o + 1) * n * inner]);
        }
    }
    drop(views);
    let ext = extents.clone();
    Ok(Tensor::from_op(
        "concat",
        shape,
        data,
        tensors.to_vec(),
        Box::new(move |g| {
            let mut grads: Vec<Vec<f64>> = ext
                .iter()
                .map(|&n| Vec::with_capacity(outer * n * inner))
                .collect();
            let mut off = 0;
            for _ in 0..outer {
                for (gv, &n) in grads.iter_mut().zip(&ext) {
                    gv.extend_from_slice(&g[off..off + n * inner]);
                    off += n * inner;
                }
            }
            grads.into_iter().map(Some).collect()
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::constant(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn broadcast_add_matches_tiling() {
        let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let b = t(&[3], &[10., 20., 30.]);
        let tiled = t(&[2, 3], &[10., 20., 30., 10., 20., 30.]);
        assert_eq!(a.add(&b).unwrap().to_vec(), a.add(&tiled).unwrap().to_vec());
        // middle-axis broadcast
        let c = t(&[2, 1], &[100., 200.]);
        assert_eq!(
            a.add(&c).unwrap().to_vec(),
            vec![101., 102., 103., 204., 205., 206.]
        );
    }

    #[test]
    fn broadcast_incompatible() {
        let a = t(&[2, 3], &[0.; 6]);
        let b = t(&[2], &[0.; 2]);
        assert!(matches!(a.add(&b), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn broadcast_grad_reduces() {
        let a = Tensor::param(&[2, 3], vec![1.; 6]).unwrap();
        let b = Tensor::param(&[3], vec![2., 3., 4.]).unwrap();
        a.mul(&b).unwrap().sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2., 2., 2.]);
        assert_eq!(a.grad().unwrap(), vec![2., 3., 4., 2., 3., 4.]);
    }

    #[test]
    fn reshape_round_trip() {
        let x = t(&[6], &[1., 2., 3., 4., 5., 6.]);
        let y = x.reshape(&[2, 3]).unwrap().reshape(&[6]).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn permute_and_transpose() {
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let y = x.transpose(0, 1).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.to_vec(), vec![1., 4., 2., 5., 3., 6.]);
        assert_eq!(y.transpose(0, 1).unwrap().to_vec(), x.to_vec());
        let z = Tensor::constant(&[2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        let p = z.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        // p[k, i, j] == z[i, j, k]
        assert_eq!(p.data()[6 + 3 + 2], z.data()[12 + 2 * 4 + 1]);
        assert!(z.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn pad_slice_concat() {
        let x = t(&[2, 2], &[1., 2., 3., 4.]);
        let p = x.pad_axis(1, 0, 2).unwrap();
        assert_eq!(p.to_vec(), vec![1., 2., 0., 0., 3., 4., 0., 0.]);
        assert_eq!(p.slice_axis(1, 0, 2).unwrap().to_vec(), x.to_vec());
        assert!(matches!(
            x.slice_axis(1, 1, 3),
            Err(TensorError::SliceOutOfRange { .. })
        ));
        let c = concat(&[x.clone(), x.clone()], 0).unwrap();
        assert_eq!(c.shape(), &[4, 2]);
        let c1 = concat(&[x.clone(), p.clone()], 1).unwrap();
        assert_eq!(c1.shape(), &[2, 6]);
        assert_eq!(
            c1.to_vec(),
            vec![1., 2., 1., 2., 0., 0., 3., 4., 3., 4., 0., 0.]
        );
    }

    #[test]
    fn reductions() {
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(x.sum().item(), 21.0);
        assert_eq!(x.sum_axis(0, false).unwrap().to_vec(), vec![5., 7., 9.]);
        assert_eq!(x.sum_axis(1, true).unwrap().shape(), &[2, 1]);
        assert_eq!(x.mean_axis(1, false).unwrap().to_vec(), vec![2., 5.]);
    }
}
