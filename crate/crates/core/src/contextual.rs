//! Parameter-free stochastic spatial masking of visual features.
//!
//! For each routed item the block averages channels into a saliency map
//! `f_m`, derives a binary threshold mask `M` (zero above `th_ratio * max`)
//! and a sigmoid context map `C_f`, picks one of them as the base selector,
//! zeroes a fixed fraction of spatial positions per frame and multiplies
//! the features by the result. Nothing here is learned.

use cad_tensor::{sigmoid, Element, Tensor};
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{CadError, Result};
use crate::seed::Rng;

/// Visual features shaped `[batch, frames, spatial, channels]`.
#[derive(Clone, Debug)]
pub struct VisualFeatureMap<T: Element = f32>(Tensor<T>);

impl<T: Element> VisualFeatureMap<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        if tensor.rank() != 4 {
            return Err(CadError::Config(format!(
                "visual features must be [B, t, s, c], got {:?}",
                tensor.shape()
            )));
        }
        Ok(Self(tensor))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn spatial(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[3]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectorMode {
    /// One fair draw per pass picks `C_f` or `M`, then `mask_frac` of the
    /// positions are zeroed.
    #[default]
    CoinThenMask,
    /// Each position independently takes `C_f` with `map_select_prob`,
    /// otherwise `M`; `mask_frac` zeroing still follows.
    ElementwisePick,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    /// One Bernoulli draw per batch item.
    #[default]
    Item,
    /// One draw per (item, frame).
    Frame,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContextualConfig {
    pub sample_frac: f64,
    pub mask_frac: f64,
    pub th_ratio: f64,
    pub map_select_prob: f64,
    pub selector_mode: SelectorMode,
    pub routing: Routing,
    /// Apply the block outside training as well.
    pub at_inference: bool,
}

impl Default for ContextualConfig {
    fn default() -> Self {
        Self {
            sample_frac: 0.8,
            mask_frac: 0.9,
            th_ratio: 0.9,
            map_select_prob: 0.5,
            selector_mode: SelectorMode::CoinThenMask,
            routing: Routing::Item,
            at_inference: false,
        }
    }
}

impl ContextualConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("contextual.sample_frac", self.sample_frac),
            ("contextual.mask_frac", self.mask_frac),
            ("contextual.th_ratio", self.th_ratio),
            ("contextual.map_select_prob", self.map_select_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CadError::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Positions zeroed per frame slice of `spatial` positions.
    pub fn masked_positions(&self, spatial: usize) -> usize {
        let exact = self.mask_frac * spatial as f64;
        // Guard against 0.9 * 100 landing a hair above 90.
        ((exact - 1e-9).ceil().max(0.0) as usize).min(spatial)
    }
}

/// Intermediate maps, each `[B, t, s]`.
#[derive(Clone, Debug)]
pub struct ContextualMaps {
    pub f_m: Vec<f64>,
    pub mask: Vec<f64>,
    pub context: Vec<f64>,
    pub selector: Vec<f64>,
    pub shape: [usize; 3],
}

/// Mean over the channel axis: `[B, t, s, c] -> [B, t, s]`.
pub fn channel_mean<T: Element>(v: &VisualFeatureMap<T>) -> Vec<f64> {
    let c = v.channels();
    let data = v.tensor().data();
    data.chunks(c)
        .map(|ch| ch.iter().map(|x| x.widen()).sum::<f64>() / c as f64)
        .collect()
}

/// Per `(batch, frame)` slice of `spatial` values: `th = th_ratio * max`,
/// zero where `f_m > th`, one elsewhere.
pub fn threshold_mask(f_m: &[f64], spatial: usize, th_ratio: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(f_m.len());
    for slice in f_m.chunks(spatial) {
        let th = th_ratio * slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.extend(slice.iter().map(|&x| if x > th { 0.0 } else { 1.0 }));
    }
    out
}

pub fn contextual_map(f_m: &[f64]) -> Vec<f64> {
    f_m.iter().map(|&x| sigmoid(x)).collect()
}

/// Chooses the base map and zeroes `ceil(mask_frac * s)` uniformly random
/// positions in every `(batch, frame)` slice.
pub fn build_selector(mask: &[f64], context: &[f64], spatial: usize, cfg: &ContextualConfig, rng: &mut Rng) -> Vec<f64> {
    assert_eq!(mask.len(), context.len(), "M and C_f must be shape-matched");
    let mut r = match cfg.selector_mode {
        SelectorMode::CoinThenMask => {
            if rng.random::<f64>() < cfg.map_select_prob {
                context.to_vec()
            } else {
                mask.to_vec()
            }
        }
        SelectorMode::ElementwisePick => mask
            .iter()
            .zip(context)
            .map(|(&m, &c)| if rng.random::<f64>() < cfg.map_select_prob { c } else { m })
            .collect(),
    };
    let k = cfg.masked_positions(spatial);
    if k > 0 {
        for slice in r.chunks_mut(spatial) {
            for i in sample(rng, spatial, k) {
                slice[i] = 0.0;
            }
        }
    }
    r
}

pub fn contextual_maps<T: Element>(v: &VisualFeatureMap<T>, cfg: &ContextualConfig, rng: &mut Rng) -> ContextualMaps {
    let s = v.spatial();
    let f_m = channel_mean(v);
    let mask = threshold_mask(&f_m, s, cfg.th_ratio);
    let context = contextual_map(&f_m);
    let selector = build_selector(&mask, &context, s, cfg, rng);
    ContextualMaps {
        f_m,
        mask,
        context,
        selector,
        shape: [v.batch(), v.frames(), s],
    }
}

/// Block output plus bookkeeping for downstream attention.
#[derive(Clone, Debug)]
pub struct ContextualOutput<T: Element = f32> {
    pub features: VisualFeatureMap<T>,
    /// Per `(batch, frame)` slice: whether the selector was applied.
    pub routed: Vec<bool>,
    /// Per token `[B, t * s]`: false where the selector zeroed the position.
    pub keep: Vec<bool>,
}

impl<T: Element> ContextualOutput<T> {
    fn passthrough(v: &VisualFeatureMap<T>) -> Self {
        Self {
            features: v.clone(),
            routed: vec![false; v.batch() * v.frames()],
            keep: vec![true; v.batch() * v.frames() * v.spatial()],
        }
    }
}

/// Runs the block. Outside training (unless `at_inference`) the input is
/// returned untouched. The selector is treated as a constant, so gradients
/// reach `v` only at surviving positions.
pub fn apply_contextual_block<T: Element>(
    v: &VisualFeatureMap<T>,
    cfg: &ContextualConfig,
    rng: &mut Rng,
    training: bool,
) -> Result<ContextualOutput<T>> {
    if !(training || cfg.at_inference) {
        return Ok(ContextualOutput::passthrough(v));
    }
    let (b, t, s) = (v.batch(), v.frames(), v.spatial());
    let maps = contextual_maps(v, cfg, rng);
    let routed: Vec<bool> = match cfg.routing {
        Routing::Item => (0..b)
            .flat_map(|_| {
                let r = rng.random::<f64>() < cfg.sample_frac;
                std::iter::repeat_n(r, t)
            })
            .collect(),
        Routing::Frame => (0..b * t).map(|_| rng.random::<f64>() < cfg.sample_frac).collect(),
    };
    if !routed.iter().any(|&r| r) {
        return Ok(ContextualOutput::passthrough(v));
    }
    let mut factor = Vec::with_capacity(b * t * s);
    let mut keep = Vec::with_capacity(b * t * s);
    for (sel, &r) in maps.selector.chunks(s).zip(routed.iter()) {
        for &x in sel {
            if r {
                factor.push(T::of(x));
                keep.push(x != 0.0);
            } else {
                factor.push(T::one());
                keep.push(true);
            }
        }
    }
    let factor = Tensor::from_vec(&[b, t, s, 1], factor)?;
    let features = VisualFeatureMap::new(v.tensor().mul(&factor)?)?;
    Ok(ContextualOutput { features, routed, keep })
}

/// Count of tokens (spatial positions) with any nonzero channel.
pub fn nonzero_tokens<T: Element>(v: &VisualFeatureMap<T>) -> usize {
    let c = v.channels();
    v.tensor().data().chunks(c).filter(|ch| ch.iter().any(|x| *x != T::zero())).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    fn map(shape: [usize; 4], data: Vec<f32>) -> VisualFeatureMap<f32> {
        VisualFeatureMap::new(Tensor::from_vec(&shape, data).unwrap()).unwrap()
    }

    fn random_map(shape: [usize; 4], seed: u64) -> VisualFeatureMap<f32> {
        let mut r = rng(seed);
        let n = shape.iter().product();
        map(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn channel_mean_examples() {
        assert!(channel_mean(&map([1, 2, 2, 3], vec![1.0; 12])).iter().all(|&x| x == 1.0));
        assert_eq!(channel_mean(&map([1, 1, 1, 2], vec![2.0, 4.0])), vec![3.0]);
        assert_eq!(channel_mean(&map([1, 1, 3, 1], vec![0.5, -1.0, 2.0])), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn threshold_mask_examples() {
        assert_eq!(threshold_mask(&[0.1, 0.5, 1.0], 3, 0.9), vec![1.0, 1.0, 0.0]);
        // Every value equals the max, which exceeds 0.9 * max.
        assert_eq!(threshold_mask(&[0.4, 0.4, 0.4], 3, 0.9), vec![0.0, 0.0, 0.0]);
        // Negative max: th = -0.9 and nothing exceeds it.
        assert_eq!(threshold_mask(&[-1.0, -2.0], 2, 0.9), vec![1.0, 1.0]);
    }

    #[test]
    fn threshold_is_per_slice() {
        // Two frames with very different scales.
        let m = threshold_mask(&[1.0, 10.0, 0.1, 0.05], 2, 0.9);
        assert_eq!(m, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn contextual_map_is_monotone_in_unit_interval() {
        let c = contextual_map(&[-3.0, 0.0, 0.5, 4.0]);
        assert_eq!(c[1], 0.5);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert!(c.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn selector_zeroes_exact_count() {
        let cfg = ContextualConfig::default();
        let ones = vec![1.0; 3 * 100];
        let r = build_selector(&ones, &ones, 100, &cfg, &mut rng(1));
        for slice in r.chunks(100) {
            assert_eq!(slice.iter().filter(|&&x| x == 0.0).count(), 90);
        }
    }

    #[test]
    fn selector_without_masking_is_a_base_map() {
        let cfg = ContextualConfig { mask_frac: 0.0, ..Default::default() };
        let m = vec![1.0, 0.0, 1.0, 1.0];
        let c = vec![0.2, 0.4, 0.6, 0.8];
        for seed in 0..20 {
            let r = build_selector(&m, &c, 4, &cfg, &mut rng(seed));
            assert!(r == m || r == c);
        }
    }

    #[test]
    fn selector_is_seed_deterministic() {
        let cfg = ContextualConfig::default();
        let m: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let c: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        assert_eq!(build_selector(&m, &c, 10, &cfg, &mut rng(5)), build_selector(&m, &c, 10, &cfg, &mut rng(5)));
    }

    #[test]
    fn elementwise_pick_mixes_maps() {
        let cfg = ContextualConfig {
            mask_frac: 0.0,
            selector_mode: SelectorMode::ElementwisePick,
            map_select_prob: 0.9,
            ..Default::default()
        };
        let m = vec![0.0; 10_000];
        let c = vec![1.0; 10_000];
        let r = build_selector(&m, &c, 100, &cfg, &mut rng(2));
        let frac = r.iter().sum::<f64>() / r.len() as f64;
        assert!((frac - 0.9).abs() < 0.02, "{frac}");
    }

    #[test]
    fn inference_is_identity() {
        let v = random_map([2, 3, 10, 4], 3);
        let out = apply_contextual_block(&v, &ContextualConfig::default(), &mut rng(0), false).unwrap();
        assert!(out.features.tensor().ptr_eq(v.tensor()));
        assert!(out.keep.iter().all(|&k| k));
    }

    #[test]
    fn zero_sample_frac_is_identity() {
        let v = random_map([4, 2, 10, 3], 4);
        let cfg = ContextualConfig { sample_frac: 0.0, ..Default::default() };
        let out = apply_contextual_block(&v, &cfg, &mut rng(0), true).unwrap();
        assert_eq!(out.features.tensor().to_vec(), v.tensor().to_vec());
    }

    #[test]
    fn full_routing_zeroes_at_least_ninety_of_hundred() {
        let v = random_map([3, 2, 100, 2], 5);
        let cfg = ContextualConfig { sample_frac: 1.0, ..Default::default() };
        let out = apply_contextual_block(&v, &cfg, &mut rng(9), true).unwrap();
        let data = out.features.tensor().to_vec();
        for frame in data.chunks(100 * 2) {
            let zeroed = frame.chunks(2).filter(|ch| ch.iter().all(|&x| x == 0.0)).count();
            assert!(zeroed >= 90, "{zeroed}");
        }
    }

    #[test]
    fn frame_routing_draws_per_frame() {
        let v = random_map([50, 4, 10, 2], 6);
        let cfg = ContextualConfig { routing: Routing::Frame, ..Default::default() };
        let out = apply_contextual_block(&v, &cfg, &mut rng(1), true).unwrap();
        let mixed = out.routed.chunks(4).filter(|f| f.iter().any(|&r| r) && f.iter().any(|&r| !r)).count();
        assert!(mixed > 0);
    }

    #[test]
    fn gradient_is_zero_at_masked_positions() {
        let mut r = rng(7);
        let data: Vec<f64> = (0..2 * 10 * 3).map(|_| r.random_range(0.1..1.0)).collect();
        let v = Tensor::<f64>::param(&[1, 2, 10, 3], data).unwrap();
        let vm = VisualFeatureMap::new(v.clone()).unwrap();
        let cfg = ContextualConfig { sample_frac: 1.0, ..Default::default() };
        let out = apply_contextual_block(&vm, &cfg, &mut rng(3), true).unwrap();
        out.features.tensor().sum_all().backward().unwrap();
        let grad = v.grad().unwrap();
        for (tok, &kept) in out.keep.iter().enumerate() {
            let g = &grad[tok * 3..(tok + 1) * 3];
            if !kept {
                assert!(g.iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn rejects_wrong_rank_and_bad_fractions() {
        assert!(VisualFeatureMap::new(Tensor::<f32>::zeros(&[2, 3, 4])).is_err());
        let cfg = ContextualConfig { mask_frac: 1.5, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
