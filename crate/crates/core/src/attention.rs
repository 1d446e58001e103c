//! Multi-head attention and the residual cross-attention block.

use cad_tensor::{Element, ParamSet, Tensor};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{CadError, Result};
use crate::seed::Rng;

/// Additive logit for excluded keys; large enough to vanish under softmax.
const MASKED_LOGIT: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CabConfig {
    pub model_dim: usize,
    pub num_heads: usize,
}

impl CabConfig {
    pub fn full_scale() -> Self {
        Self { model_dim: 512, num_heads: 8 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return Err(CadError::Config(format!(
                "model.dim = {} must be a positive multiple of model.heads = {}",
                self.model_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

impl Default for CabConfig {
    fn default() -> Self {
        Self { model_dim: 64, num_heads: 4 }
    }
}

/// Affine map over the last axis; `weight` is `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Linear<T> {
    /// Uniform in `±1/sqrt(fan_in)` for both weight and bias.
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Self::scaled(fan_in, fan_out, 1.0, rng)
    }

    /// Like [`Linear::new`] with the bound multiplied by `gain`.
    pub fn scaled(fan_in: usize, fan_out: usize, gain: f64, rng: &mut Rng) -> Self {
        let bound = gain / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect() };
        let weight = draw(fan_in * fan_out);
        let bias = draw(fan_out);
        Self {
            weight: Tensor::param(&[fan_in, fan_out], weight).expect("nonzero extents"),
            bias: Tensor::param(&[fan_out], bias).expect("nonzero extents"),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.matmul(&self.weight)?.add(&self.bias)?)
    }

    pub fn register(&self, prefix: &str, params: &mut ParamSet<T>) -> Result<()> {
        params.insert(format!("{prefix}.weight"), self.weight.clone())?;
        params.insert(format!("{prefix}.bias"), self.bias.clone())?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm<T: Element = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Element> LayerNorm<T> {
    pub const EPS: f64 = 1e-5;

    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Tensor::param(&[dim], vec![T::one(); dim]).expect("nonzero extent"),
            beta: Tensor::param(&[dim], vec![T::zero(); dim]).expect("nonzero extent"),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.layer_norm_lastdim(&self.gamma, &self.beta, Self::EPS)?)
    }

    pub fn register(&self, prefix: &str, params: &mut ParamSet<T>) -> Result<()> {
        params.insert(format!("{prefix}.gamma"), self.gamma.clone())?;
        params.insert(format!("{prefix}.beta"), self.beta.clone())?;
        Ok(())
    }
}

/// Every learnable tensor of one cross-attention block. The per-head
/// projections are stored fused as `[d, d]` matrices split by column.
#[derive(Clone, Debug)]
pub struct CabWeights<T: Element = f32> {
    pub config: CabConfig,
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub norm: LayerNorm<T>,
}

impl<T: Element> CabWeights<T> {
    pub fn new(config: CabConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        Ok(Self {
            config,
            query: Linear::new(d, d, rng),
            key: Linear::new(d, d, rng),
            value: Linear::new(d, d, rng),
            output: Linear::new(d, d, rng),
            fc1: Linear::new(d, d, rng),
            fc2: Linear::new(d, d, rng),
            norm: LayerNorm::new(d),
        })
    }

    pub fn register(&self, prefix: &str, params: &mut ParamSet<T>) -> Result<()> {
        self.query.register(&format!("{prefix}.query"), params)?;
        self.key.register(&format!("{prefix}.key"), params)?;
        self.value.register(&format!("{prefix}.value"), params)?;
        self.output.register(&format!("{prefix}.output"), params)?;
        self.fc1.register(&format!("{prefix}.fc1"), params)?;
        self.fc2.register(&format!("{prefix}.fc2"), params)?;
        self.norm.register(&format!("{prefix}.norm"), params)
    }
}

/// Intermediates of one block evaluation, each `[B, Lq, d]`.
#[derive(Clone, Debug)]
pub struct CabTrace<T: Element = f32> {
    pub f_a: Tensor<T>,
    pub r1: Tensor<T>,
    pub r2: Tensor<T>,
    pub f_f: Tensor<T>,
    pub f_n: Tensor<T>,
    /// Softmax weights `[B, heads, Lq, Lk]`.
    pub attention: Tensor<T>,
}

/// Builds the additive key mask `[B, 1, 1, Lk]` from per-token keep flags.
/// An item with no kept keys is left unmasked so its softmax stays defined.
pub fn key_mask<T: Element>(keep: &[bool], batch: usize) -> Result<Tensor<T>> {
    let lk = keep.len() / batch;
    let mut out = Vec::with_capacity(keep.len());
    for row in keep.chunks(lk) {
        let any = row.iter().any(|&k| k);
        out.extend(row.iter().map(|&k| if k || !any { T::zero() } else { T::of(MASKED_LOGIT) }));
    }
    Ok(Tensor::from_vec(&[batch, 1, 1, lk], out)?)
}

fn check_dims<T: Element>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, d: usize) -> Result<()> {
    let bad = |t: &Tensor<T>| t.rank() != 3 || t.shape()[2] != d;
    if bad(q) || bad(k) || bad(v) || k.shape()[..2] != v.shape()[..2] || q.shape()[0] != k.shape()[0] {
        return Err(CadError::Config(format!(
            "attention inputs must be [B, L, {d}] with matching key/value: query {:?}, key {:?}, value {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    Ok(())
}

/// Scaled dot-product attention per head; returns the projected output
/// `[B, Lq, d]` and the attention weights.
pub fn multi_head_attention<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    w: &CabWeights<T>,
    mask: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let d = w.config.model_dim;
    check_dims(q, k, v, d)?;
    let (h, hd) = (w.config.num_heads, w.config.head_dim());
    let (b, lq, lk) = (q.shape()[0], q.shape()[1], k.shape()[1]);

    let split = |x: Tensor<T>, len: usize, axes: &[usize]| -> Result<Tensor<T>> {
        Ok(x.reshape(&[b, len, h, hd])?.permute(axes)?)
    };
    let qh = split(w.query.forward(q)?, lq, &[0, 2, 1, 3])?;
    let kt = split(w.key.forward(k)?, lk, &[0, 2, 3, 1])?;
    let vh = split(w.value.forward(v)?, lk, &[0, 2, 1, 3])?;

    let mut logits = qh.matmul(&kt)?.scale(1.0 / (hd as f64).sqrt());
    if let Some(m) = mask {
        logits = logits.add(m)?;
    }
    let attention = logits.softmax_lastdim()?;
    let heads = attention.matmul(&vh)?.permute(&[0, 2, 1, 3])?.reshape(&[b, lq, d])?;
    Ok((w.output.forward(&heads)?, attention))
}

pub fn cab_trace<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    w: &CabWeights<T>,
    mask: Option<&Tensor<T>>,
) -> Result<CabTrace<T>> {
    let (f_a, attention) = multi_head_attention(q, k, v, w, mask)?;
    let r1 = w.fc1.forward(&f_a)?.relu();
    let r2 = w.fc2.forward(&r1)?.relu();
    let f_f = f_a.add(&r2)?;
    let f_n = w.norm.forward(&f_f)?;
    Ok(CabTrace { f_a, r1, r2, f_f, f_n, attention })
}

pub fn cab_forward<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    w: &CabWeights<T>,
    mask: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    Ok(cab_trace(q, k, v, w, mask)?.f_n)
}

/// Sinusoidal encodings `[positions.len(), dim]` row-major.
pub fn sinusoidal_encoding(positions: &[usize], dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(positions.len() * dim);
    for &p in positions {
        for i in 0..dim {
            let rate = 10000f64.powf(-((i / 2 * 2) as f64) / dim as f64);
            let angle = p as f64 * rate;
            out.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    fn identity(d: usize) -> Vec<f64> {
        (0..d * d).map(|i| if i / d == i % d { 1.0 } else { 0.0 }).collect()
    }

    fn set_identity(l: &Linear<f64>) {
        let d = l.fan_in();
        l.weight.set_data(identity(d)).unwrap();
        l.bias.set_data(vec![0.0; d]).unwrap();
    }

    fn identity_block(d: usize, heads: usize) -> CabWeights<f64> {
        let w = CabWeights::new(CabConfig { model_dim: d, num_heads: heads }, &mut rng(0)).unwrap();
        for l in [&w.query, &w.key, &w.value, &w.output] {
            set_identity(l);
        }
        w
    }

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = rng(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn full_scale_head_dim() {
        assert_eq!(CabConfig::full_scale().head_dim(), 64);
        assert!(CabConfig { model_dim: 10, num_heads: 4 }.validate().is_err());
    }

    #[test]
    fn uniform_logits_average_values() {
        let w = identity_block(4, 2);
        let q = Tensor::zeros(&[1, 1, 4]);
        let k = random(&[1, 3, 4], 1);
        let v = random(&[1, 3, 4], 2);
        let (out, _) = multi_head_attention(&q, &k, &v, &w, None).unwrap();
        let vals = v.to_vec();
        for (j, o) in out.to_vec().iter().enumerate() {
            let mean = (vals[j] + vals[4 + j] + vals[8 + j]) / 3.0;
            assert!((o - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_query_selects_value() {
        let w = identity_block(4, 1);
        let k = Tensor::from_vec(&[1, 4, 4], identity(4)).unwrap();
        let v = random(&[1, 4, 4], 3);
        for j in 0..4 {
            let mut qd = vec![0.0; 4];
            qd[j] = 50.0;
            let q = Tensor::from_vec(&[1, 1, 4], qd).unwrap();
            let (out, _) = multi_head_attention(&q, &k, &v, &w, None).unwrap();
            for (o, want) in out.to_vec().iter().zip(&v.to_vec()[j * 4..(j + 1) * 4]) {
                assert!((o - want).abs() < 1e-4, "{o} vs {want}");
            }
        }
    }

    #[test]
    fn zero_feed_forward_reduces_to_normed_attention() {
        let w = CabWeights::<f64>::new(CabConfig { model_dim: 8, num_heads: 2 }, &mut rng(4)).unwrap();
        for l in [&w.fc1, &w.fc2] {
            l.weight.set_data(vec![0.0; 64]).unwrap();
            l.bias.set_data(vec![0.0; 8]).unwrap();
        }
        let (q, k) = (random(&[2, 3, 8], 5), random(&[2, 5, 8], 6));
        let trace = cab_trace(&q, &k, &k, &w, None).unwrap();
        let want = w.norm.forward(&trace.f_a).unwrap();
        assert_eq!(trace.f_n.to_vec(), want.to_vec());
    }

    #[test]
    fn output_follows_query_length() {
        let w = CabWeights::<f32>::new(CabConfig { model_dim: 16, num_heads: 4 }, &mut rng(7)).unwrap();
        for lk in [1, 4, 9] {
            let q = Tensor::zeros(&[2, 3, 16]);
            let k = Tensor::ones(&[2, lk, 16]);
            assert_eq!(cab_forward(&q, &k, &k, &w, None).unwrap().shape(), &[2, 3, 16]);
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let w = CabWeights::<f64>::new(CabConfig { model_dim: 8, num_heads: 2 }, &mut rng(8)).unwrap();
        let (q, k) = (random(&[2, 3, 8], 9), random(&[2, 6, 8], 10));
        let (_, att) = multi_head_attention(&q, &k, &k, &w, None).unwrap();
        for row in att.to_vec().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn key_mask_excludes_dropped_tokens() {
        let w = CabWeights::<f64>::new(CabConfig { model_dim: 4, num_heads: 1 }, &mut rng(11)).unwrap();
        let (q, k) = (random(&[1, 2, 4], 12), random(&[1, 3, 4], 13));
        let mask = key_mask::<f64>(&[true, false, true], 1).unwrap();
        let (_, att) = multi_head_attention(&q, &k, &k, &w, Some(&mask)).unwrap();
        for row in att.to_vec().chunks(3) {
            assert!(row[1] < 1e-12);
        }
        let all_dropped = key_mask::<f64>(&[false, false], 1).unwrap();
        assert!(all_dropped.to_vec().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_dim_mismatch() {
        let w = CabWeights::<f32>::new(CabConfig { model_dim: 8, num_heads: 2 }, &mut rng(14)).unwrap();
        let q = Tensor::zeros(&[1, 2, 6]);
        let k = Tensor::zeros(&[1, 2, 8]);
        assert!(cab_forward(&q, &k, &k, &w, None).is_err());
        let k3 = Tensor::zeros(&[2, 2, 8]);
        assert!(cab_forward(&Tensor::zeros(&[1, 2, 8]), &k3, &k3, &w, None).is_err());
    }

    #[test]
    fn encoding_starts_at_sin_cos_origin() {
        let pe = sinusoidal_encoding(&[0, 1], 4);
        assert_eq!(&pe[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe[4] - 1f64.sin()).abs() < 1e-12);
    }
}
