//! Supervised answer training and evaluation.

use cad_tensor::{AdamConfig, AdamState, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::contextual::{ContextualConfig, VisualFeatureMap};
use crate::error::{CadError, Result};
use crate::metrics::MetricsTable;
use crate::model::{avqa_loss, CadModel, FeatureTriple};
use crate::seed::{stream_rng, Stream};
use crate::synthetic::{Sample, QUESTION_LEN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            batch_size: 64,
            epochs: 25,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || self.batch_size == 0 {
            return Err(CadError::Config("optimizer.lr must be >= 0 and optimizer.batch_size > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(CadError::Config("optimizer betas must lie in [0, 1) and epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Shape of stored samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleDims {
    pub n_cues: usize,
    pub spatial: usize,
    pub feat_dim: usize,
    pub text_dim: usize,
}

pub fn sample_batch(samples: &[&Sample], dims: SampleDims) -> Result<(FeatureTriple, Vec<usize>)> {
    let b = samples.len();
    let SampleDims { n_cues, spatial, feat_dim, text_dim } = dims;
    let cat = |f: &dyn Fn(&Sample) -> &[f32]| samples.iter().flat_map(|s| f(s).iter().copied()).collect::<Vec<f32>>();
    let a = Tensor::from_vec(&[b, n_cues, feat_dim], cat(&|s| &s.audio))?;
    let v = Tensor::from_vec(&[b, n_cues, spatial, feat_dim], cat(&|s| &s.visual))?;
    let t = Tensor::from_vec(&[b, QUESTION_LEN, text_dim], cat(&|s| &s.question))?;
    let labels = samples.iter().map(|s| s.answer).collect();
    Ok((FeatureTriple::new(a, t, VisualFeatureMap::new(v)?)?, labels))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainEpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    /// Mean fraction of nonzero visual tokens entering the visual blocks.
    pub visual_token_fraction: f64,
}

pub struct TrainSetup<'a> {
    pub train: &'a [Sample],
    pub dims: SampleDims,
    pub optimizer: &'a OptimizerConfig,
    pub contextual: &'a ContextualConfig,
    pub seed: u64,
}

fn argmax(row: &[f32]) -> usize {
    row.iter().enumerate().fold((0, f32::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b }).0
}

/// Adam on the answer cross-entropy; batches are reshuffled every epoch.
pub fn train_answering(model: &CadModel, setup: &TrainSetup<'_>) -> Result<Vec<TrainEpochLog>> {
    setup.optimizer.validate()?;
    if setup.train.is_empty() {
        return Err(CadError::Dataset("training split is empty".into()));
    }
    let params = model.params();
    let mut adam = AdamState::new(setup.optimizer.adam());
    let mut shuffle_rng = stream_rng(setup.seed, Stream::Shuffle, 0);
    let mut ctx_rng = stream_rng(setup.seed, Stream::Contextual, 0);
    let n_answers = model.config.n_answers;
    let mut logs = Vec::with_capacity(setup.optimizer.epochs);
    let mut order: Vec<usize> = (0..setup.train.len()).collect();
    for epoch in 0..setup.optimizer.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut hits, mut tokens, mut nonzero) = (0.0, 0usize, 0usize, 0usize);
        for (step, chunk) in order.chunks(setup.optimizer.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &setup.train[i]).collect();
            let (x, labels) = sample_batch(&batch, setup.dims)?;
            let (logits, chain) = model.forward_answer_traced(&x, setup.contextual, &mut ctx_rng, true)?;
            let loss = avqa_loss(&logits, &labels)?;
            let value = loss.item() as f64;
            if !value.is_finite() {
                return Err(CadError::NonFiniteLoss { phase: "train", epoch, step, value });
            }
            loss.backward()?;
            adam.step(&params)?;
            loss_sum += value * batch.len() as f64;
            hits += logits.data().chunks(n_answers).zip(&labels).filter(|(r, &y)| argmax(r) == y).count();
            tokens += chain.visual_tokens;
            nonzero += chain.nonzero_visual_tokens;
        }
        let n = setup.train.len() as f64;
        logs.push(TrainEpochLog {
            epoch,
            loss: loss_sum / n,
            train_accuracy: hits as f64 / n,
            visual_token_fraction: nonzero as f64 / tokens.max(1) as f64,
        });
    }
    Ok(logs)
}

pub fn predict(model: &CadModel, samples: &[Sample], dims: SampleDims, contextual: &ContextualConfig) -> Result<Vec<usize>> {
    let mut rng = stream_rng(0, Stream::Contextual, u64::MAX);
    let mut out = Vec::with_capacity(samples.len());
    let n = model.config.n_answers;
    for chunk in samples.chunks(256) {
        let batch: Vec<&Sample> = chunk.iter().collect();
        let (x, _) = sample_batch(&batch, dims)?;
        let logits = model.forward_answer(&x, contextual, &mut rng, false)?;
        out.extend(logits.data().chunks(n).map(argmax));
    }
    Ok(out)
}

pub fn evaluate(model: &CadModel, samples: &[Sample], dims: SampleDims, contextual: &ContextualConfig) -> Result<MetricsTable> {
    let preds = predict(model, samples, dims, contextual)?;
    Ok(MetricsTable::from_outcomes(samples.iter().zip(preds).map(|(s, p)| (s.category, p == s.answer))))
}
