use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops::shape::{broadcast_map, broadcast_shape};
use crate::tensor::{numel, Tensor};

fn widen<T: Element>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.widen()).collect()
}

/// `c[m,n] += a[m,k] @ b[k,n]`, all row-major f64.
fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in row.iter_mut().zip(brow) {
                *cj += av * bj;
            }
        }
    }
}

/// `c[m,k] += g[m,n] @ b[k,n]^T`
fn gemm_nt_acc(g: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            c[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c[k,n] += a[m,k]^T @ g[m,n]`
fn gemm_tn_acc(a: &[f64], g: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, &gj) in crow.iter_mut().zip(grow) {
                *cj += av * gj;
            }
        }
    }
}

impl<T: Element> Tensor<T> {
    /// Batched matrix product `[..., m, k] @ [..., k, n]`. Leading batch
    /// extents broadcast from 1 (or from missing axes).
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            left: self.shape().to_vec(),
            right: other.shape().to_vec(),
        };
        if self.rank() < 2 || other.rank() < 2 {
            return Err(mismatch());
        }
        let (sa, sb) = (self.shape(), other.shape());
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let batch_a = sa[..sa.len() - 2].to_vec();
        let batch_b = sb[..sb.len() - 2].to_vec();
        let batch = broadcast_shape(&batch_a, &batch_b).ok_or_else(mismatch)?;
        let nb = numel(&batch);
        let map_a = broadcast_map(&batch_a, &batch);
        let map_b = broadcast_map(&batch_b, &batch);
        let ia = move |i: usize| map_a.as_ref().map_or(i, |m| m[i]);
        let ib = move |i: usize| map_b.as_ref().map_or(i, |m| m[i]);

        let a64 = widen(&self.data());
        let b64 = widen(&other.data());
        let mut c = vec![0.0f64; nb * m * n];
        for bi in 0..nb {
            let (oa, ob) = (ia(bi), ib(bi));
            gemm_acc(
                &a64[oa * m * k..(oa + 1) * m * k],
                &b64[ob * k * n..(ob + 1) * k * n],
                &mut c[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = batch.clone();
        shape.extend_from_slice(&[m, n]);
        let (len_a, len_b) = (self.numel(), other.numel());
        Ok(Tensor::from_op(
            shape,
            c.into_iter().map(T::of).collect(),
            vec![self.clone(), other.clone()],
            Box::new(move |ctx| {
                let g = widen(ctx.grad);
                let (pa, pb) = (&ctx.parents[0], &ctx.parents[1]);
                let ga = pa.requires_grad().then(|| {
                    let b = widen(&pb.data());
                    let mut acc = vec![0.0f64; len_a];
                    for bi in 0..nb {
                        let (oa, ob) = (ia(bi), ib(bi));
                        gemm_nt_acc(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &b[ob * k * n..(ob + 1) * k * n],
                            &mut acc[oa * m * k..(oa + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                    acc.into_iter().map(T::of).collect()
                });
                let gb = pb.requires_grad().then(|| {
                    let a = widen(&pa.data());
                    let mut acc = vec![0.0f64; len_b];
                    for bi in 0..nb {
                        let (oa, ob) = (ia(bi), ib(bi));
                        gemm_tn_acc(
                            &a[oa * m * k..(oa + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut acc[ob * k * n..(ob + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    acc.into_iter().map(T::of).collect()
                });
                vec![ga, gb]
            }),
        ))
    }
}
