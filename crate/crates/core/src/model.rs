//! The full network: modality projections, the cross-attention chain, and
//! either the answer classifier or the three time-label heads.

use std::fmt;
use std::str::FromStr;

use cad_tensor::{Element, ParamSet, Tensor};
use serde::{Deserialize, Serialize};

use crate::attention::{cab_forward, key_mask, sinusoidal_encoding, CabConfig, CabWeights, Linear};
use crate::checkpoint::Checkpoint;
use crate::contextual::{apply_contextual_block, nonzero_tokens, ContextualConfig, VisualFeatureMap};
use crate::error::{CadError, Result};
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum Variant {
    #[serde(rename = "2CA")]
    TwoCa,
    #[default]
    #[serde(rename = "3CA")]
    ThreeCa,
    #[serde(rename = "4CA")]
    FourCa,
}

impl Variant {
    /// Number of pooled block outputs feeding the answer head.
    pub fn fused_blocks(self) -> usize {
        match self {
            Variant::TwoCa => 2,
            Variant::ThreeCa => 3,
            Variant::FourCa => 4,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::TwoCa => "2CA",
            Variant::ThreeCa => "3CA",
            Variant::FourCa => "4CA",
        })
    }
}

impl FromStr for Variant {
    type Err = CadError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "2CA" => Ok(Variant::TwoCa),
            "3CA" => Ok(Variant::ThreeCa),
            "4CA" => Ok(Variant::FourCa),
            _ => Err(CadError::Config(format!("unknown variant `{s}` (expected 2CA, 3CA or 4CA)"))),
        }
    }
}

/// Which modalities reach the network; the rest are replaced by zeros.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum Inputs {
    #[serde(rename = "Q")]
    Q,
    #[serde(rename = "AQ")]
    Aq,
    #[serde(rename = "VQ")]
    Vq,
    #[default]
    #[serde(rename = "AVQ")]
    Avq,
}

impl Inputs {
    pub fn audio(self) -> bool {
        matches!(self, Inputs::Aq | Inputs::Avq)
    }

    pub fn visual(self) -> bool {
        matches!(self, Inputs::Vq | Inputs::Avq)
    }
}

impl fmt::Display for Inputs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Inputs::Q => "Q",
            Inputs::Aq => "AQ",
            Inputs::Vq => "VQ",
            Inputs::Avq => "AVQ",
        })
    }
}

impl FromStr for Inputs {
    type Err = CadError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['+', ' '], "").as_str() {
            "Q" => Ok(Inputs::Q),
            "AQ" => Ok(Inputs::Aq),
            "VQ" => Ok(Inputs::Vq),
            "AVQ" => Ok(Inputs::Avq),
            _ => Err(CadError::Config(format!("unknown inputs `{s}` (expected Q, AQ, VQ or AVQ)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    /// Feature dims follow the data section rather than being configured.
    #[serde(skip)]
    pub audio_dim: usize,
    #[serde(skip)]
    pub text_dim: usize,
    #[serde(skip)]
    pub visual_dim: usize,
    pub n_answers: usize,
    pub n_time_labels: usize,
    pub variant: Variant,
    pub use_contextual: bool,
    pub inputs: Inputs,
    pub positional_encoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 512,
            heads: 8,
            audio_dim: 512,
            text_dim: 512,
            visual_dim: 512,
            n_answers: 42,
            n_time_labels: 60,
            variant: Variant::ThreeCa,
            use_contextual: true,
            inputs: Inputs::Avq,
            positional_encoding: false,
        }
    }
}

impl ModelConfig {
    pub fn cab(&self) -> CabConfig {
        CabConfig { model_dim: self.dim, num_heads: self.heads }
    }

    pub fn validate(&self) -> Result<()> {
        self.cab().validate()?;
        if self.audio_dim == 0 || self.text_dim == 0 || self.visual_dim == 0 {
            return Err(CadError::Config("model feature dims must be positive".into()));
        }
        if self.n_answers < 2 || self.n_time_labels < 2 {
            return Err(CadError::Config("model.n_answers and model.n_time_labels must be at least 2".into()));
        }
        Ok(())
    }
}

/// One batch of audio `[B, Ta, da]`, text `[B, Lq, dt]` and visual
/// `[B, Tv, s, c]` features.
#[derive(Clone, Debug)]
pub struct FeatureTriple<T: Element = f32> {
    pub a: Tensor<T>,
    pub t: Tensor<T>,
    pub v: VisualFeatureMap<T>,
}

impl<T: Element> FeatureTriple<T> {
    pub fn new(a: Tensor<T>, t: Tensor<T>, v: VisualFeatureMap<T>) -> Result<Self> {
        if a.rank() != 3 || t.rank() != 3 {
            return Err(CadError::Config(format!(
                "audio and text features must be rank 3, got {:?} and {:?}",
                a.shape(),
                t.shape()
            )));
        }
        let (ba, bt, bv) = (a.shape()[0], t.shape()[0], v.batch());
        if ba != bt || bt != bv {
            return Err(CadError::BatchMismatch {
                context: "feature triple",
                audio: ba,
                text: bt,
                visual: bv,
            });
        }
        Ok(Self { a, t, v })
    }

    pub fn batch(&self) -> usize {
        self.t.shape()[0]
    }
}

/// Block outputs before pooling.
#[derive(Clone, Debug)]
pub struct ChainOutputs<T: Element = f32> {
    pub a_t: Tensor<T>,
    pub v_t: Tensor<T>,
    pub v_at: Option<Tensor<T>>,
    pub a_vt: Option<Tensor<T>>,
    /// Visual tokens entering the visual blocks, and how many are nonzero.
    pub visual_tokens: usize,
    pub nonzero_visual_tokens: usize,
}

impl<T: Element> ChainOutputs<T> {
    pub fn pooled(&self) -> Result<Vec<Tensor<T>>> {
        let mut out = vec![self.a_t.mean_dim(1)?, self.v_t.mean_dim(1)?];
        for x in [&self.v_at, &self.a_vt].into_iter().flatten() {
            out.push(x.mean_dim(1)?);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct PretrainHeads<T: Element = f32> {
    pub audio: Linear<T>,
    pub visual_t: Linear<T>,
    pub visual_at: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct PretrainLogits<T: Element = f32> {
    pub audio: Tensor<T>,
    pub visual_t: Tensor<T>,
    pub visual_at: Tensor<T>,
}

#[derive(Clone, Debug)]
pub enum Head<T: Element = f32> {
    Answer(Linear<T>),
    Pretrain(PretrainHeads<T>),
}

/// All learnable tensors, addressable by name through [`CadModel::params`].
#[derive(Clone, Debug)]
pub struct CadModel<T: Element = f32> {
    pub config: ModelConfig,
    pub proj_audio: Linear<T>,
    pub proj_text: Linear<T>,
    pub proj_visual: Linear<T>,
    pub cab1: CabWeights<T>,
    pub cab2: CabWeights<T>,
    pub cab3: Option<CabWeights<T>>,
    pub cab4: Option<CabWeights<T>>,
    pub head: Head<T>,
}

/// Classifier layers start small so initial predictions are near uniform.
const HEAD_GAIN: f64 = 0.25;

/// Prefixes of the tensors carried over from pre-training.
const TRANSFER_PREFIXES: [&str; 4] = ["proj.", "cab1.", "cab2.", "cab3."];

impl<T: Element> CadModel<T> {
    fn trunk(config: &ModelConfig, three_blocks: bool, rng: &mut Rng) -> Result<(Linear<T>, Linear<T>, Linear<T>, [Option<CabWeights<T>>; 4])> {
        config.validate()?;
        let d = config.dim;
        let proj_audio = Linear::new(config.audio_dim, d, rng);
        let proj_text = Linear::new(config.text_dim, d, rng);
        let proj_visual = Linear::new(config.visual_dim, d, rng);
        let cab = config.cab();
        let cab1 = CabWeights::new(cab, rng)?;
        let cab2 = CabWeights::new(cab, rng)?;
        // Draw CAB3 even when it is dropped so the other tensors keep their values.
        let cab3 = CabWeights::new(cab, rng)?;
        let cab4 = CabWeights::new(cab, rng)?;
        let blocks = [
            Some(cab1),
            Some(cab2),
            (three_blocks || config.variant != Variant::TwoCa).then_some(cab3),
            (!three_blocks && config.variant == Variant::FourCa).then_some(cab4),
        ];
        Ok((proj_audio, proj_text, proj_visual, blocks))
    }

    fn assemble(config: ModelConfig, parts: (Linear<T>, Linear<T>, Linear<T>, [Option<CabWeights<T>>; 4]), head: Head<T>) -> Self {
        let (proj_audio, proj_text, proj_visual, [cab1, cab2, cab3, cab4]) = parts;
        Self {
            config,
            proj_audio,
            proj_text,
            proj_visual,
            cab1: cab1.expect("always built"),
            cab2: cab2.expect("always built"),
            cab3,
            cab4,
            head,
        }
    }

    /// Answering graph. The trunk and the answer head draw from separate
    /// streams so a fresh head never depends on how the trunk was made.
    pub fn for_answering(config: ModelConfig, trunk_rng: &mut Rng, head_rng: &mut Rng) -> Result<Self> {
        let parts = Self::trunk(&config, false, trunk_rng)?;
        let width = config.variant.fused_blocks() * config.dim;
        let head = Head::Answer(Linear::scaled(width, config.n_answers, HEAD_GAIN, head_rng));
        Ok(Self::assemble(config, parts, head))
    }

    /// Pre-training graph: always the three-block chain with three heads.
    pub fn for_pretraining(config: ModelConfig, trunk_rng: &mut Rng, head_rng: &mut Rng) -> Result<Self> {
        let config = ModelConfig { variant: Variant::ThreeCa, ..config };
        let parts = Self::trunk(&config, true, trunk_rng)?;
        let (d, n) = (config.dim, config.n_time_labels);
        let head = Head::Pretrain(PretrainHeads {
            audio: Linear::scaled(d, n, HEAD_GAIN, head_rng),
            visual_t: Linear::scaled(d, n, HEAD_GAIN, head_rng),
            visual_at: Linear::scaled(d, n, HEAD_GAIN, head_rng),
        });
        Ok(Self::assemble(config, parts, head))
    }

    pub fn trunk_params(&self) -> ParamSet<T> {
        let mut ps = ParamSet::new();
        self.register_trunk(&mut ps).expect("trunk names are unique");
        ps
    }

    fn register_trunk(&self, ps: &mut ParamSet<T>) -> Result<()> {
        self.proj_audio.register("proj.audio", ps)?;
        self.proj_text.register("proj.text", ps)?;
        self.proj_visual.register("proj.visual", ps)?;
        self.cab1.register("cab1", ps)?;
        self.cab2.register("cab2", ps)?;
        if let Some(c) = &self.cab3 {
            c.register("cab3", ps)?;
        }
        if let Some(c) = &self.cab4 {
            c.register("cab4", ps)?;
        }
        Ok(())
    }

    pub fn params(&self) -> ParamSet<T> {
        let mut ps = self.trunk_params();
        match &self.head {
            Head::Answer(l) => l.register("answer", &mut ps),
            Head::Pretrain(h) => h
                .audio
                .register("head.audio", &mut ps)
                .and_then(|_| h.visual_t.register("head.visual_t", &mut ps))
                .and_then(|_| h.visual_at.register("head.visual_at", &mut ps)),
        }
        .expect("head names are unique");
        ps
    }

    fn encode(&self, proj: &Linear<T>, x: &Tensor<T>, positions: &[usize]) -> Result<Tensor<T>> {
        let h = proj.forward(x)?;
        if !self.config.positional_encoding {
            return Ok(h);
        }
        let pe = Tensor::from_f64(&[positions.len(), self.config.dim], &sinusoidal_encoding(positions, self.config.dim))?;
        Ok(h.add(&pe)?)
    }

    /// Projections, contextual block and the attention chain.
    pub fn forward_chain(&self, x: &FeatureTriple<T>, ctx: &ContextualConfig, rng: &mut Rng, training: bool) -> Result<ChainOutputs<T>> {
        let b = x.batch();
        let inputs = self.config.inputs;
        let (ta, lq) = (x.a.shape()[1], x.t.shape()[1]);
        let (tv, s, c) = (x.v.frames(), x.v.spatial(), x.v.channels());

        let raw_a = if inputs.audio() { x.a.clone() } else { Tensor::zeros(x.a.shape()) };
        let raw_v = if inputs.visual() {
            x.v.clone()
        } else {
            VisualFeatureMap::new(Tensor::zeros(x.v.tensor().shape()))?
        };
        let (raw_v, keep) = if self.config.use_contextual {
            let out = apply_contextual_block(&raw_v, ctx, rng, training)?;
            (out.features, out.keep)
        } else {
            (raw_v, vec![true; b * tv * s])
        };
        let nonzero_visual_tokens = nonzero_tokens(&raw_v);

        let audio_pos: Vec<usize> = (0..ta).collect();
        let visual_pos: Vec<usize> = (0..tv * s).map(|i| i / s).collect();
        let text_pos = vec![0; lq];
        let a = self.encode(&self.proj_audio, &raw_a, &audio_pos)?;
        let t = self.encode(&self.proj_text, &x.t, &text_pos)?;
        let v = self.encode(&self.proj_visual, &raw_v.into_tensor().reshape(&[b, tv * s, c])?, &visual_pos)?;

        let mask = if keep.iter().all(|&k| k) { None } else { Some(key_mask::<T>(&keep, b)?) };

        let a_t = cab_forward(&t, &a, &a, &self.cab1, None)?;
        let v_t = cab_forward(&t, &v, &v, &self.cab2, mask.as_ref())?;
        let v_at = match &self.cab3 {
            Some(w) => Some(cab_forward(&a_t, &v, &v, w, mask.as_ref())?),
            None => None,
        };
        let a_vt = match &self.cab4 {
            Some(w) => Some(cab_forward(&v_t, &a, &a, w, None)?),
            None => None,
        };
        Ok(ChainOutputs {
            a_t,
            v_t,
            v_at,
            a_vt,
            visual_tokens: b * tv * s,
            nonzero_visual_tokens,
        })
    }

    /// Answer logits `[B, n_answers]`.
    pub fn forward_answer(&self, x: &FeatureTriple<T>, ctx: &ContextualConfig, rng: &mut Rng, training: bool) -> Result<Tensor<T>> {
        Ok(self.forward_answer_traced(x, ctx, rng, training)?.0)
    }

    pub fn forward_answer_traced(
        &self,
        x: &FeatureTriple<T>,
        ctx: &ContextualConfig,
        rng: &mut Rng,
        training: bool,
    ) -> Result<(Tensor<T>, ChainOutputs<T>)> {
        let Head::Answer(answer) = &self.head else {
            return Err(CadError::Config("model was built for pre-training, not answering".into()));
        };
        let chain = self.forward_chain(x, ctx, rng, training)?;
        let pooled = chain.pooled()?;
        let fused = Tensor::concat_lastdim(&pooled.iter().collect::<Vec<_>>())?;
        Ok((answer.forward(&fused)?, chain))
    }

    pub fn forward_pretrain(&self, x: &FeatureTriple<T>, ctx: &ContextualConfig, rng: &mut Rng, training: bool) -> Result<PretrainLogits<T>> {
        let Head::Pretrain(heads) = &self.head else {
            return Err(CadError::Config("model was built for answering, not pre-training".into()));
        };
        let chain = self.forward_chain(x, ctx, rng, training)?;
        let v_at = chain.v_at.as_ref().expect("pre-training graph has CAB3");
        Ok(PretrainLogits {
            audio: heads.audio.forward(&chain.a_t.mean_dim(1)?)?,
            visual_t: heads.visual_t.forward(&chain.v_t.mean_dim(1)?)?,
            visual_at: heads.visual_at.forward(&v_at.mean_dim(1)?)?,
        })
    }

    /// Copies every transferable trunk tensor from `ckpt`. Heads and any
    /// block absent from pre-training (CAB4) keep their fresh values.
    pub fn init_from_pretrained(&self, ckpt: &Checkpoint) -> Result<()> {
        let trunk = self.trunk_params();
        for (name, tensor) in trunk.iter() {
            if !TRANSFER_PREFIXES.iter().any(|p| name.starts_with(p)) {
                continue;
            }
            let stored = ckpt.get(name).ok_or_else(|| CadError::MissingTensor(name.to_string()))?;
            if stored.shape != tensor.shape() {
                return Err(CadError::TensorShape {
                    name: name.to_string(),
                    expected: tensor.shape().to_vec(),
                    found: stored.shape.clone(),
                });
            }
            tensor.set_data(stored.data.iter().map(|&x| T::of(x as f64)).collect())?;
        }
        Ok(())
    }

    /// Loads every tensor of [`CadModel::params`] from `ckpt`.
    pub fn load_all(&self, ckpt: &Checkpoint) -> Result<()> {
        for (name, tensor) in self.params().iter() {
            let stored = ckpt.get(name).ok_or_else(|| CadError::MissingTensor(name.to_string()))?;
            if stored.shape != tensor.shape() {
                return Err(CadError::TensorShape {
                    name: name.to_string(),
                    expected: tensor.shape().to_vec(),
                    found: stored.shape.clone(),
                });
            }
            tensor.set_data(stored.data.iter().map(|&x| T::of(x as f64)).collect())?;
        }
        Ok(())
    }
}

pub fn avqa_loss<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    Ok(logits.cross_entropy(labels)?)
}

/// Sum of the three head cross-entropies.
pub fn alignment_loss<T: Element>(heads: &PretrainLogits<T>, audio_labels: &[usize], visual_labels: &[usize]) -> Result<Tensor<T>> {
    let la = heads.audio.cross_entropy(audio_labels)?;
    let lt = heads.visual_t.cross_entropy(visual_labels)?;
    let lat = heads.visual_at.cross_entropy(visual_labels)?;
    Ok(la.add(&lt)?.add(&lat)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng as _, SeedableRng};

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            dim: 8,
            heads: 2,
            audio_dim: 5,
            text_dim: 6,
            visual_dim: 3,
            n_answers: 7,
            n_time_labels: 4,
            variant,
            use_contextual: true,
            inputs: Inputs::Avq,
            positional_encoding: true,
        }
    }

    fn random(shape: &[usize], r: &mut Rng) -> Tensor<f32> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn triple(b: usize, cfg: &ModelConfig, seed: u64) -> FeatureTriple<f32> {
        let mut r = rng(seed);
        FeatureTriple::new(
            random(&[b, 4, cfg.audio_dim], &mut r),
            random(&[b, 2, cfg.text_dim], &mut r),
            VisualFeatureMap::new(random(&[b, 4, 4, cfg.visual_dim], &mut r)).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn full_scale_logit_shape() {
        let cfg = ModelConfig {
            audio_dim: 4,
            text_dim: 4,
            visual_dim: 4,
            ..ModelConfig::default()
        };
        let m = CadModel::<f32>::for_answering(cfg.clone(), &mut rng(0), &mut rng(1)).unwrap();
        let logits = m.forward_answer(&triple(2, &cfg, 2), &ContextualConfig::default(), &mut rng(3), false).unwrap();
        assert_eq!(logits.shape(), &[2, 42]);
        assert!(logits.to_vec().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn fused_width_follows_variant() {
        for (v, blocks) in [(Variant::TwoCa, 2), (Variant::ThreeCa, 3), (Variant::FourCa, 4)] {
            let m = CadModel::<f32>::for_answering(tiny(v), &mut rng(0), &mut rng(1)).unwrap();
            let Head::Answer(a) = &m.head else { unreachable!() };
            assert_eq!(a.fan_in(), blocks * 8);
        }
    }

    #[test]
    fn variants_share_trunk_shapes() {
        let base = CadModel::<f32>::for_answering(tiny(Variant::ThreeCa), &mut rng(0), &mut rng(1)).unwrap();
        for v in [Variant::TwoCa, Variant::FourCa] {
            let m = CadModel::<f32>::for_answering(tiny(v), &mut rng(0), &mut rng(1)).unwrap();
            for (name, t) in m.trunk_params().iter() {
                if let Some(b) = base.trunk_params().get(name) {
                    assert_eq!(b.to_vec(), t.to_vec(), "{name}");
                }
            }
        }
        let two = CadModel::<f32>::for_answering(tiny(Variant::TwoCa), &mut rng(0), &mut rng(1)).unwrap();
        assert!(!two.params().names().any(|n| n.starts_with("cab3")));
        let four = CadModel::<f32>::for_answering(tiny(Variant::FourCa), &mut rng(0), &mut rng(1)).unwrap();
        assert!(four.params().names().any(|n| n.starts_with("cab4")));
    }

    #[test]
    fn trunk_names_match_across_graphs() {
        let a = CadModel::<f32>::for_answering(tiny(Variant::ThreeCa), &mut rng(0), &mut rng(1)).unwrap();
        let p = CadModel::<f32>::for_pretraining(tiny(Variant::ThreeCa), &mut rng(0), &mut rng(1)).unwrap();
        let an: Vec<_> = a.trunk_params().names().map(String::from).collect();
        let pn: Vec<_> = p.trunk_params().names().map(String::from).collect();
        assert_eq!(an, pn);
        assert!(a.params().contains("answer.weight") && !a.params().contains("head.audio.weight"));
        assert!(p.params().contains("head.visual_at.bias") && !p.params().contains("answer.weight"));
    }

    #[test]
    fn inference_is_deterministic() {
        let cfg = tiny(Variant::ThreeCa);
        let m = CadModel::<f32>::for_answering(cfg.clone(), &mut rng(0), &mut rng(1)).unwrap();
        let x = triple(3, &cfg, 4);
        let ctx = ContextualConfig::default();
        let a = m.forward_answer(&x, &ctx, &mut rng(5), false).unwrap().to_vec();
        let b = m.forward_answer(&x, &ctx, &mut rng(6), false).unwrap().to_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn pretrain_heads_start_near_uniform() {
        let cfg = ModelConfig { n_time_labels: 60, ..tiny(Variant::ThreeCa) };
        let m = CadModel::<f32>::for_pretraining(cfg.clone(), &mut rng(0), &mut rng(1)).unwrap();
        let x = triple(16, &cfg, 7);
        let heads = m.forward_pretrain(&x, &ContextualConfig::default(), &mut rng(8), true).unwrap();
        assert_eq!(heads.audio.shape(), &[16, 60]);
        let labels: Vec<usize> = (0..16).collect();
        for h in [&heads.audio, &heads.visual_t, &heads.visual_at] {
            let ce = h.cross_entropy(&labels).unwrap().item() as f64;
            assert!((ce / 60f64.ln() - 1.0).abs() < 0.1, "{ce}");
        }
    }

    #[test]
    fn wrong_graph_is_rejected() {
        let cfg = tiny(Variant::ThreeCa);
        let p = CadModel::<f32>::for_pretraining(cfg.clone(), &mut rng(0), &mut rng(1)).unwrap();
        assert!(p.forward_answer(&triple(1, &cfg, 0), &ContextualConfig::default(), &mut rng(0), false).is_err());
    }

    #[test]
    fn batch_mismatch_is_an_error() {
        let mut r = rng(0);
        let err = FeatureTriple::new(
            random(&[2, 4, 5], &mut r),
            random(&[3, 2, 6], &mut r),
            VisualFeatureMap::new(random(&[2, 4, 4, 3], &mut r)).unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, CadError::BatchMismatch { .. }));
    }

    #[test]
    fn missing_modalities_are_zeroed() {
        let cfg = ModelConfig { inputs: Inputs::Q, ..tiny(Variant::ThreeCa) };
        let m = CadModel::<f32>::for_answering(cfg.clone(), &mut rng(0), &mut rng(1)).unwrap();
        let x = triple(2, &cfg, 9);
        let mut y = triple(2, &cfg, 10);
        y.t = x.t.clone();
        let ctx = ContextualConfig::default();
        let la = m.forward_answer(&x, &ctx, &mut rng(0), false).unwrap().to_vec();
        let lb = m.forward_answer(&y, &ctx, &mut rng(0), false).unwrap().to_vec();
        assert_eq!(la, lb);
    }

    #[test]
    fn contextual_block_thins_visual_tokens() {
        let cfg = tiny(Variant::ThreeCa);
        let m = CadModel::<f32>::for_answering(cfg.clone(), &mut rng(0), &mut rng(1)).unwrap();
        let x = triple(8, &cfg, 11);
        let ctx = ContextualConfig { sample_frac: 1.0, ..Default::default() };
        let (_, chain) = m.forward_answer_traced(&x, &ctx, &mut rng(2), true).unwrap();
        // ceil(0.9 * 4) = 4, so every token is zeroed.
        assert_eq!(chain.nonzero_visual_tokens, 0);
        let (_, full) = m.forward_answer_traced(&x, &ctx, &mut rng(2), false).unwrap();
        assert_eq!(full.nonzero_visual_tokens, full.visual_tokens);
    }

    #[test]
    fn analytic_losses() {
        let uniform = Tensor::<f64>::zeros(&[2, 60]);
        let heads = PretrainLogits {
            audio: uniform.clone(),
            visual_t: uniform.clone(),
            visual_at: uniform,
        };
        let l = alignment_loss(&heads, &[0, 59], &[3, 4]).unwrap().item();
        assert!((l - 3.0 * 60f64.ln()).abs() < 1e-5);
        assert!((avqa_loss(&Tensor::<f64>::zeros(&[1, 42]), &[5]).unwrap().item() - 42f64.ln()).abs() < 1e-9);
        let mut peaked = vec![0.0; 42];
        peaked[5] = 100.0;
        assert!(avqa_loss(&Tensor::<f64>::from_vec(&[1, 42], peaked).unwrap(), &[5]).unwrap().item() < 1e-12);
        assert!(avqa_loss(&Tensor::<f64>::zeros(&[1, 42]), &[42]).is_err());
    }
}
