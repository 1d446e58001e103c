use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

fn last_extent<T: Element>(x: &Tensor<T>, op: &'static str) -> Result<usize> {
    match x.shape().last() {
        Some(&n) => Ok(n),
        None => Err(TensorError::InvalidShape {
            op,
            shape: Vec::new(),
            reason: "needs at least one axis",
        }),
    }
}

/// Max-subtracted softmax of one row, in f64.
pub(crate) fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

impl<T: Element> Tensor<T> {
    pub fn softmax_lastdim(&self) -> Result<Tensor<T>> {
        let n = last_extent(self, "softmax_lastdim")?;
        let x: Vec<f64> = self.data().iter().map(|v| v.widen()).collect();
        let mut y = vec![0.0f64; x.len()];
        for (xr, yr) in x.chunks(n).zip(y.chunks_mut(n)) {
            softmax_row(xr, yr);
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y.into_iter().map(T::of).collect(),
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = Vec::with_capacity(ctx.grad.len());
                for (gr, yr) in ctx.grad.chunks(n).zip(ctx.out.chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g.widen() * y.widen()).sum();
                    g.extend(gr.iter().zip(yr).map(|(g, y)| T::of(y.widen() * (g.widen() - dot))));
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Normalizes each last-axis slice to zero mean and unit (population)
    /// variance, then applies `gamma * x + beta`.
    pub fn layer_norm_lastdim(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let n = last_extent(self, "layer_norm_lastdim")?;
        if n < 2 {
            return Err(TensorError::InvalidShape {
                op: "layer_norm_lastdim",
                shape: self.shape().to_vec(),
                reason: "normalizing over fewer than 2 features is degenerate",
            });
        }
        for p in [gamma, beta] {
            if p.shape() != [n] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm_lastdim",
                    left: self.shape().to_vec(),
                    right: p.shape().to_vec(),
                });
            }
        }
        let x: Vec<f64> = self.data().iter().map(|v| v.widen()).collect();
        let g64: Vec<f64> = gamma.data().iter().map(|v| v.widen()).collect();
        let b64: Vec<f64> = beta.data().iter().map(|v| v.widen()).collect();
        let rows = x.len() / n;
        let mut xhat = vec![0.0f64; x.len()];
        let mut inv_std = vec![0.0f64; rows];
        let mut out = Vec::with_capacity(x.len());
        for r in 0..rows {
            let row = &x[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out.push(T::of(h * g64[j] + b64[j]));
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |ctx| {
                let g: Vec<f64> = ctx.grad.iter().map(|v| v.widen()).collect();
                let gamma: Vec<f64> = ctx.parents[1].data().iter().map(|v| v.widen()).collect();
                let gx = ctx.parents[0].requires_grad().then(|| {
                    let mut gx = Vec::with_capacity(g.len());
                    let mut dxhat = vec![0.0f64; n];
                    for r in 0..rows {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        for j in 0..n {
                            dxhat[j] = gr[j] * gamma[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dh = dxhat.iter().zip(hr).map(|(d, h)| d * h).sum::<f64>() / n as f64;
                        for j in 0..n {
                            gx.push(T::of(inv_std[r] * (dxhat[j] - mean_d - hr[j] * mean_dh)));
                        }
                    }
                    gx
                });
                let ggamma = ctx.parents[1].requires_grad().then(|| {
                    let mut acc = vec![0.0f64; n];
                    for r in 0..rows {
                        for j in 0..n {
                            acc[j] += g[r * n + j] * xhat[r * n + j];
                        }
                    }
                    acc.into_iter().map(T::of).collect()
                });
                let gbeta = ctx.parents[2].requires_grad().then(|| {
                    let mut acc = vec![0.0f64; n];
                    for r in 0..rows {
                        for j in 0..n {
                            acc[j] += g[r * n + j];
                        }
                    }
                    acc.into_iter().map(T::of).collect()
                });
                vec![gx, ggamma, gbeta]
            }),
        ))
    }

    /// Batch mean of `-log softmax(logits)[label]` for `[B, K]` logits.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor<T>> {
        if self.rank() != 2 || self.shape()[0] != labels.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: self.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let (b, k) = (self.shape()[0], self.shape()[1]);
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(TensorError::LabelOutOfRange { index, label, classes: k });
        }
        let x: Vec<f64> = self.data().iter().map(|v| v.widen()).collect();
        let mut probs = vec![0.0f64; x.len()];
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &x[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
            softmax_row(row, &mut probs[r * k..(r + 1) * k]);
        }
        let labels = labels.to_vec();
        Ok(Tensor::from_op(
            Vec::new(),
            vec![T::of(total / b as f64)],
            vec![self.clone()],
            Box::new(move |ctx| {
                let scale = ctx.grad[0].widen() / b as f64;
                let mut g: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &label) in labels.iter().enumerate() {
                    g[r * k + label] -= scale;
                }
                vec![Some(g.into_iter().map(T::of).collect())]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform() {
        let x = Tensor::<f64>::zeros(&[3]);
        for p in x.softmax_lastdim().unwrap().to_vec() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_of_logs_recovers_ratios() {
        let x = Tensor::<f64>::from_f64(&[3], &[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        let y = x.softmax_lastdim().unwrap().to_vec();
        for (got, want) in y.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let x = Tensor::<f64>::from_f64(&[4], &[0.3, -1.2, 2.0, 0.0]).unwrap();
        let a = x.softmax_lastdim().unwrap().to_vec();
        let b = x.add_scalar(123.0).softmax_lastdim().unwrap().to_vec();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_large_logits_stay_finite() {
        let x = Tensor::<f32>::from_vec(&[2], vec![1e4, -1e4]).unwrap();
        let y = x.softmax_lastdim().unwrap().to_vec();
        assert_eq!(y, vec![1.0, 0.0]);
    }

    #[test]
    fn layer_norm_constant_slice_is_zero() {
        let x = Tensor::<f64>::full(&[2, 4], 3.5);
        let y = x
            .layer_norm_lastdim(&Tensor::ones(&[4]), &Tensor::zeros(&[4]), 1e-5)
            .unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_two_points() {
        let x = Tensor::<f64>::from_f64(&[2], &[1.0, 3.0]).unwrap();
        let y = x
            .layer_norm_lastdim(&Tensor::ones(&[2]), &Tensor::zeros(&[2]), 1e-12)
            .unwrap()
            .to_vec();
        assert!((y[0] + 1.0).abs() < 1e-6 && (y[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_rejects_single_feature() {
        let x = Tensor::<f64>::ones(&[3, 1]);
        assert!(x.layer_norm_lastdim(&Tensor::ones(&[1]), &Tensor::zeros(&[1]), 1e-5).is_err());
    }

    #[test]
    fn cross_entropy_uniform_four_classes() {
        let x = Tensor::<f64>::zeros(&[3, 4]);
        let l = x.cross_entropy(&[0, 1, 3]).unwrap().item();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_peaked_is_near_zero() {
        let x = Tensor::<f64>::from_f64(&[1, 3], &[50.0, 0.0, 0.0]).unwrap();
        assert!(x.cross_entropy(&[0]).unwrap().item() < 1e-20);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range() {
        let x = Tensor::<f64>::zeros(&[2, 3]);
        assert_eq!(
            x.cross_entropy(&[0, 3]).unwrap_err(),
            TensorError::LabelOutOfRange { index: 1, label: 3, classes: 3 }
        );
    }
}
