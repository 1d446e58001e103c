use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::{numel, Tensor};

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes, aligned on the trailing axis.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out`, the flat index into a tensor of shape
/// `src` broadcast up to `out`. `None` when no broadcasting happens.
pub(crate) fn broadcast_map(src: &[usize], out: &[usize]) -> Option<Vec<usize>> {
    if src == out {
        return None;
    }
    let rank = out.len();
    let pad = rank - src.len();
    let src_strides = strides(src);
    // Stride zero on broadcast axes.
    let eff: Vec<usize> = (0..rank)
        .map(|i| {
            if i < pad || src[i - pad] == 1 {
                0
            } else {
                src_strides[i - pad]
            }
        })
        .collect();
    let total = numel(out);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        map.push(offset);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += eff[ax];
            if idx[ax] < out[ax] {
                break;
            }
            offset -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Some(map)
}

/// Sums a gradient of the broadcast shape back down to the source shape.
pub(crate) fn reduce_broadcast<T: Element>(grad: &[T], map: &Option<Vec<usize>>, src_len: usize) -> Vec<T> {
    match map {
        None => grad.to_vec(),
        Some(map) => {
            let mut acc = vec![0.0f64; src_len];
            for (g, &i) in grad.iter().zip(map) {
                acc[i] += g.widen();
            }
            acc.into_iter().map(T::of).collect()
        }
    }
}

impl<T: Element> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() || shape.iter().any(|&e| e == 0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: self.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|ctx| vec![Some(ctx.grad.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::InvalidShape {
                op: "permute",
                shape: self.shape().to_vec(),
                reason: "axes must be a permutation of 0..rank",
            });
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        // map[out_flat] = in_flat
        let in_strides = strides(&in_shape);
        let gather: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let total = self.numel();
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        let mut offset = 0usize;
        for _ in 0..total {
            map.push(offset);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                offset += gather[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                offset -= gather[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        let data = {
            let src = self.data();
            map.iter().map(|&i| src[i]).collect()
        };
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![T::zero(); ctx.grad.len()];
                for (o, &i) in map.iter().enumerate() {
                    g[i] = ctx.grad[o];
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Concatenates along the last axis; all leading extents must agree.
    pub fn concat_lastdim(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = xs.first().ok_or(TensorError::InvalidShape {
            op: "concat_lastdim",
            shape: Vec::new(),
            reason: "no inputs",
        })?;
        if first.rank() == 0 {
            return Err(TensorError::InvalidShape {
                op: "concat_lastdim",
                shape: Vec::new(),
                reason: "scalars cannot be concatenated",
            });
        }
        let lead = &first.shape()[..first.rank() - 1];
        for x in xs.iter().skip(1) {
            if x.rank() != first.rank() || &x.shape()[..x.rank() - 1] != lead {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_lastdim",
                    left: first.shape().to_vec(),
                    right: x.shape().to_vec(),
                });
            }
        }
        let widths: Vec<usize> = xs.iter().map(|x| *x.shape().last().unwrap()).collect();
        let total_w: usize = widths.iter().sum();
        let rows = numel(lead);
        let mut data = Vec::with_capacity(rows * total_w);
        let sources: Vec<_> = xs.iter().map(|x| x.data()).collect();
        for r in 0..rows {
            for (src, &w) in sources.iter().zip(&widths) {
                data.extend_from_slice(&src[r * w..(r + 1) * w]);
            }
        }
        drop(sources);
        let mut shape = lead.to_vec();
        shape.push(total_w);
        let parents: Vec<Tensor<T>> = xs.iter().map(|&x| x.clone()).collect();
        Ok(Tensor::from_op(
            shape,
            data,
            parents,
            Box::new(move |ctx| {
                let mut offset = 0;
                widths
                    .iter()
                    .zip(ctx.parents)
                    .map(|(&w, p)| {
                        let start = offset;
                        offset += w;
                        if !p.requires_grad() {
                            return None;
                        }
                        let mut g = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            let base = r * total_w + start;
                            g.extend_from_slice(&ctx.grad[base..base + w]);
                        }
                        Some(g)
                    })
                    .collect()
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 1, 3], &[4, 3]), Some(vec![2, 4, 3]));
        assert_eq!(broadcast_shape(&[2, 3], &[3, 3]), None);
        assert_eq!(broadcast_shape(&[], &[5]), Some(vec![5]));
    }

    #[test]
    fn broadcast_map_repeats_rows() {
        let map = broadcast_map(&[3], &[2, 3]).unwrap();
        assert_eq!(map, vec![0, 1, 2, 0, 1, 2]);
        let map = broadcast_map(&[2, 1], &[2, 3]).unwrap();
        assert_eq!(map, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn permute_transposes() {
        let x = Tensor::<f32>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let y = x.permute(&[1, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.to_vec(), vec![1., 4., 2., 5., 3., 6.]);
        assert!(x.permute(&[0, 0]).is_err());
    }

    #[test]
    fn concat_three_model_width_inputs() {
        let parts: Vec<Tensor<f32>> = (0..3).map(|_| Tensor::zeros(&[4, 512])).collect();
        let refs: Vec<&Tensor<f32>> = parts.iter().collect();
        let y = Tensor::concat_lastdim(&refs).unwrap();
        assert_eq!(y.shape(), &[4, 1536]);
    }

    #[test]
    fn concat_single_is_identity() {
        let x = Tensor::<f32>::from_vec(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let y = Tensor::concat_lastdim(&[&x]).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn concat_preserves_order() {
        let a = Tensor::<f32>::from_vec(&[2, 1], vec![1., 2.]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 2], vec![3., 4., 5., 6.]).unwrap();
        let y = Tensor::concat_lastdim(&[&a, &b]).unwrap();
        assert_eq!(y.to_vec(), vec![1., 3., 4., 2., 5., 6.]);
    }

    #[test]
    fn concat_rejects_leading_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 8]);
        let b = Tensor::<f32>::zeros(&[3, 8]);
        assert!(matches!(
            Tensor::concat_lastdim(&[&a, &b]),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn reshape_checks_count() {
        let x = Tensor::<f32>::zeros(&[2, 3]);
        assert_eq!(x.reshape(&[3, 2]).unwrap().shape(), &[3, 2]);
        assert!(x.reshape(&[4, 2]).is_err());
    }
}
