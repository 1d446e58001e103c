use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops::shape::{broadcast_map, broadcast_shape, reduce_broadcast};
use crate::tensor::{numel, Tensor};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl<T: Element> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Add, "add")
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Sub, "sub")
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Mul, "mul")
    }

    fn binary(&self, other: &Tensor<T>, kind: Binary, op: &'static str) -> Result<Tensor<T>> {
        let out_shape = broadcast_shape(self.shape(), other.shape()).ok_or_else(|| TensorError::ShapeMismatch {
            op,
            left: self.shape().to_vec(),
            right: other.shape().to_vec(),
        })?;
        let map_a = broadcast_map(self.shape(), &out_shape);
        let map_b = broadcast_map(other.shape(), &out_shape);
        let n = numel(&out_shape);
        let data: Vec<T> = {
            let a = self.data();
            let b = other.data();
            (0..n)
                .map(|i| {
                    let x = a[map_a.as_ref().map_or(i, |m| m[i])];
                    let y = b[map_b.as_ref().map_or(i, |m| m[i])];
                    match kind {
                        Binary::Add => x + y,
                        Binary::Sub => x - y,
                        Binary::Mul => x * y,
                    }
                })
                .collect()
        };
        let (len_a, len_b) = (self.numel(), other.numel());
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |ctx| {
                let (pa, pb) = (&ctx.parents[0], &ctx.parents[1]);
                let ga = pa.requires_grad().then(|| match kind {
                    Binary::Add | Binary::Sub => reduce_broadcast(ctx.grad, &map_a, len_a),
                    Binary::Mul => {
                        let b = pb.data();
                        let local: Vec<T> = ctx
                            .grad
                            .iter()
                            .enumerate()
                            .map(|(i, &g)| g * b[map_b.as_ref().map_or(i, |m| m[i])])
                            .collect();
                        reduce_broadcast(&local, &map_a, len_a)
                    }
                });
                let gb = pb.requires_grad().then(|| match kind {
                    Binary::Add => reduce_broadcast(ctx.grad, &map_b, len_b),
                    Binary::Sub => {
                        let neg: Vec<T> = ctx.grad.iter().map(|&g| -g).collect();
                        reduce_broadcast(&neg, &map_b, len_b)
                    }
                    Binary::Mul => {
                        let a = pa.data();
                        let local: Vec<T> = ctx
                            .grad
                            .iter()
                            .enumerate()
                            .map(|(i, &g)| g * a[map_a.as_ref().map_or(i, |m| m[i])])
                            .collect();
                        reduce_broadcast(&local, &map_b, len_b)
                    }
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn scale(&self, factor: f64) -> Tensor<T> {
        let f = T::of(factor);
        let data = self.data().iter().map(|&x| x * f).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |ctx| vec![Some(ctx.grad.iter().map(|&g| g * f).collect())]),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::of(c);
        let data = self.data().iter().map(|&x| x + c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|ctx| vec![Some(ctx.grad.to_vec())]),
        )
    }

    /// Elementwise `max(0, x)`; the subgradient at exactly zero is zero.
    pub fn relu(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|ctx| {
                let x = ctx.parents[0].data();
                vec![Some(
                    ctx.grad
                        .iter()
                        .zip(x.iter())
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect(),
                )]
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&x| T::of(sigmoid(x.widen()))).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|ctx| {
                vec![Some(
                    ctx.grad
                        .iter()
                        .zip(ctx.out)
                        .map(|(&g, &y)| {
                            let y = y.widen();
                            T::of(g.widen() * y * (1.0 - y))
                        })
                        .collect(),
                )]
            }),
        )
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let total: f64 = self.data().iter().map(|x| x.widen()).sum();
        let n = self.numel();
        Tensor::from_op(
            Vec::new(),
            vec![T::of(total)],
            vec![self.clone()],
            Box::new(move |ctx| vec![Some(vec![ctx.grad[0]; n])]),
        )
    }
}

/// Logistic function, stable for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
