use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::{numel, Tensor};

impl<T: Element> Tensor<T> {
    /// Arithmetic mean along `dim`; the axis is removed from the shape.
    pub fn mean_dim(&self, dim: usize) -> Result<Tensor<T>> {
        let rank = self.rank();
        if dim >= rank {
            return Err(TensorError::InvalidDim { op: "mean_dim", dim, rank });
        }
        let shape = self.shape();
        let outer = numel(&shape[..dim]);
        let len = shape[dim];
        let inner = numel(&shape[dim + 1..]);
        let mut acc = vec![0.0f64; outer * inner];
        {
            let x = self.data();
            for o in 0..outer {
                for l in 0..len {
                    let base = (o * len + l) * inner;
                    let dst = &mut acc[o * inner..(o + 1) * inner];
                    for (d, v) in dst.iter_mut().zip(&x[base..base + inner]) {
                        *d += v.widen();
                    }
                }
            }
        }
        let inv = 1.0 / len as f64;
        let data = acc.into_iter().map(|s| T::of(s * inv)).collect();
        let mut out_shape = shape.to_vec();
        out_shape.remove(dim);
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let src = &ctx.grad[o * inner..(o + 1) * inner];
                    for _ in 0..len {
                        g.extend(src.iter().map(|&v| T::of(v.widen() * inv)));
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}
