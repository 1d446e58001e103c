//! Audio-visual fine temporal alignment: cue segmentation, positive and
//! negative pair sampling, query selection and the pre-training loop.

use cad_tensor::{AdamConfig, AdamState, Tensor};
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::contextual::{ContextualConfig, VisualFeatureMap};
use crate::error::{CadError, Result};
use crate::model::{alignment_loss, CadModel, FeatureTriple, PretrainLogits};
use crate::seed::{stream_rng, Rng, Stream};
use crate::synthetic::World;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub pos_prob: f64,
    pub n_time_labels: usize,
    pub cues_per_clip: usize,
    /// Frames per cue.
    pub units_per_cue: usize,
    /// Streams in the training corpus.
    pub n_streams: usize,
    pub held_out_streams: usize,
    pub pairs_per_epoch: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            pos_prob: 0.6,
            n_time_labels: 60,
            cues_per_clip: 10,
            units_per_cue: 1,
            n_streams: 200,
            held_out_streams: 20,
            pairs_per_epoch: 4096,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pos_prob) {
            return Err(CadError::Config(format!("pretrain.pos_prob = {} is outside [0, 1]", self.pos_prob)));
        }
        if self.n_time_labels < 2 {
            return Err(CadError::TooFewLabels(self.n_time_labels));
        }
        if self.cues_per_clip == 0 || self.units_per_cue == 0 || self.n_streams == 0 || self.held_out_streams == 0 {
            return Err(CadError::Config("pretrain sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            pos_prob: self.pos_prob,
            n_time_labels: self.n_time_labels,
            cues_per_clip: self.cues_per_clip,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Audio,
    Visual,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cue {
    pub modality: Modality,
    pub time_label: usize,
    pub clip_index: usize,
    /// Row-major slice of the stream: `[units, c]` or `[units, s, c]`.
    pub features: Vec<f32>,
}

/// Splits a stream of `len` units, each `unit_size` values wide, into
/// `n_cues` equal cues labelled in order.
pub fn segment_cues(
    stream: &[f32],
    unit_size: usize,
    n_cues: usize,
    cues_per_clip: usize,
    modality: Modality,
) -> Result<Vec<Cue>> {
    let len = stream.len() / unit_size.max(1);
    if n_cues == 0 || unit_size == 0 || stream.len() % unit_size != 0 || len % n_cues != 0 {
        return Err(CadError::CueSegmentation { len, n_cues });
    }
    let per = len / n_cues * unit_size;
    Ok(stream
        .chunks(per)
        .enumerate()
        .map(|(t, f)| Cue {
            modality,
            time_label: t,
            clip_index: t / cues_per_clip,
            features: f.to_vec(),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub pos_prob: f64,
    pub n_time_labels: usize,
    pub cues_per_clip: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        PretrainConfig::default().sampler()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    pub audio_cue: Cue,
    pub visual_cue: Cue,
    pub query: Vec<f32>,
    pub positive: bool,
}

/// Label pair before cue lookup.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairLabels {
    pub audio: usize,
    pub visual: usize,
    pub positive: bool,
}

/// Draws a label pair: positive (one uniform label) with `pos_prob`,
/// otherwise two distinct uniform labels.
pub fn sample_labels(n_labels: usize, pos_prob: f64, rng: &mut Rng) -> Result<PairLabels> {
    if n_labels < 2 {
        return Err(CadError::TooFewLabels(n_labels));
    }
    if rng.random::<f64>() < pos_prob {
        let t = rng.random_range(0..n_labels);
        Ok(PairLabels { audio: t, visual: t, positive: true })
    } else {
        let ix = sample(rng, n_labels, 2);
        Ok(PairLabels {
            audio: ix.index(0),
            visual: ix.index(1),
            positive: false,
        })
    }
}

pub fn sample_pair(cues_a: &[Cue], cues_v: &[Cue], cfg: &SamplerConfig, rng: &mut Rng) -> Result<(Cue, Cue, bool)> {
    let n = cues_a.len().min(cues_v.len());
    let l = sample_labels(n, cfg.pos_prob, rng)?;
    Ok((cues_a[l.audio].clone(), cues_v[l.visual].clone(), l.positive))
}

/// Alternation state for cross-clip negatives; starts on the audio clip.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueryToggle {
    cross_clip_negatives: u64,
}

impl QueryToggle {
    pub fn new() -> Self {
        Self::default()
    }

    /// Picks the clip whose query pairs with the cues: the shared clip when
    /// both cues lie in one, otherwise the audio and visual clips in turn.
    pub fn clip_for(&mut self, audio_clip: usize, visual_clip: usize) -> usize {
        if audio_clip == visual_clip {
            return audio_clip;
        }
        let use_audio = self.cross_clip_negatives % 2 == 0;
        self.cross_clip_negatives += 1;
        if use_audio {
            audio_clip
        } else {
            visual_clip
        }
    }
}

pub fn select_query<'q>(audio_cue: &Cue, visual_cue: &Cue, clip_queries: &'q [Vec<f32>], toggle: &mut QueryToggle) -> Result<&'q [f32]> {
    let clip = toggle.clip_for(audio_cue.clip_index, visual_cue.clip_index);
    clip_queries.get(clip).map(Vec::as_slice).ok_or(CadError::MissingClipQuery(clip))
}

/// One pre-training video: aligned audio and visual streams.
#[derive(Clone, Debug)]
pub struct PretrainStream {
    pub audio: Vec<Cue>,
    pub visual: Vec<Cue>,
    pub clip_queries: Vec<Vec<f32>>,
}

/// Stream shape parameters shared with the QA data.
#[derive(Clone, Copy, Debug)]
pub struct StreamShape {
    pub spatial: usize,
    pub object_positions: usize,
    pub noise: f64,
}

/// The event at time label `t` is prototype `t`, present in both streams
/// at the same cue; visual objects sit at random positions.
pub fn generate_stream(world: &World, cfg: &PretrainConfig, shape: StreamShape, rng: &mut Rng) -> Result<PretrainStream> {
    let (n, u, s, c) = (cfg.n_time_labels, cfg.units_per_cue, shape.spatial, world.feat_dim);
    if world.prototypes.len() < n {
        return Err(CadError::Config(format!("world has {} prototypes but pretraining needs {n}", world.prototypes.len())));
    }
    let mut gauss = |len: usize| -> Vec<f32> {
        (0..len)
            .map(|_| (shape.noise * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng)) as f32)
            .collect()
    };
    let mut audio = gauss(n * u * c);
    let mut visual = gauss(n * u * s * c);
    let mut placements = Vec::with_capacity(n);
    for t in 0..n {
        let proto = &world.prototypes[t];
        for unit in t * u..(t + 1) * u {
            for (x, &p) in audio[unit * c..(unit + 1) * c].iter_mut().zip(proto) {
                *x += p;
            }
        }
        placements.push(sample(rng, s, shape.object_positions).into_vec());
        for unit in t * u..(t + 1) * u {
            for &pos in &placements[t] {
                let at = (unit * s + pos) * c;
                for (x, &p) in visual[at..at + c].iter_mut().zip(proto) {
                    *x += p;
                }
            }
        }
    }
    let clips = n.div_ceil(cfg.cues_per_clip);
    let clip_queries = (0..clips)
        .map(|k| {
            let labels: Vec<usize> = (k * cfg.cues_per_clip..((k + 1) * cfg.cues_per_clip).min(n)).collect();
            world.clip_query(&labels)
        })
        .collect();
    Ok(PretrainStream {
        audio: segment_cues(&audio, c, n, cfg.cues_per_clip, Modality::Audio)?,
        visual: segment_cues(&visual, s * c, n, cfg.cues_per_clip, Modality::Visual)?,
        clip_queries,
    })
}

pub fn generate_corpus(world: &World, cfg: &PretrainConfig, shape: StreamShape, seed: u64, stream: Stream, count: usize) -> Result<Vec<PretrainStream>> {
    (0..count)
        .map(|i| generate_stream(world, cfg, shape, &mut stream_rng(seed, stream, i as u64)))
        .collect()
}

/// Sequential pair generator over a corpus; owns its rng and toggle.
pub struct PairSampler<'c> {
    corpus: &'c [PretrainStream],
    cfg: SamplerConfig,
    rng: Rng,
    toggle: QueryToggle,
}

impl<'c> PairSampler<'c> {
    pub fn new(corpus: &'c [PretrainStream], cfg: SamplerConfig, rng: Rng) -> Self {
        Self {
            corpus,
            cfg,
            rng,
            toggle: QueryToggle::new(),
        }
    }

    pub fn next_pair(&mut self) -> Result<PairSample> {
        let stream = &self.corpus[self.rng.random_range(0..self.corpus.len())];
        let (audio_cue, visual_cue, positive) = sample_pair(&stream.audio, &stream.visual, &self.cfg, &mut self.rng)?;
        let query = select_query(&audio_cue, &visual_cue, &stream.clip_queries, &mut self.toggle)?.to_vec();
        Ok(PairSample {
            audio_cue,
            visual_cue,
            query,
            positive,
        })
    }
}

/// Stacks pairs into model inputs and the two label vectors.
pub fn pair_batch(pairs: &[PairSample], feat_dim: usize, spatial: usize, text_dim: usize) -> Result<(FeatureTriple, Vec<usize>, Vec<usize>)> {
    let b = pairs.len();
    let units = pairs[0].audio_cue.features.len() / feat_dim;
    let q_len = pairs[0].query.len() / text_dim;
    let cat = |f: &dyn Fn(&PairSample) -> &[f32]| pairs.iter().flat_map(|p| f(p).iter().copied()).collect::<Vec<f32>>();
    let a = Tensor::from_vec(&[b, units, feat_dim], cat(&|p| &p.audio_cue.features))?;
    let v = Tensor::from_vec(&[b, units, spatial, feat_dim], cat(&|p| &p.visual_cue.features))?;
    let t = Tensor::from_vec(&[b, q_len, text_dim], cat(&|p| &p.query))?;
    let x = FeatureTriple::new(a, t, VisualFeatureMap::new(v)?)?;
    let la = pairs.iter().map(|p| p.audio_cue.time_label).collect();
    let lv = pairs.iter().map(|p| p.visual_cue.time_label).collect();
    Ok((x, la, lv))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub acc_audio: f64,
    pub acc_visual_t: f64,
    pub acc_visual_at: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainReport {
    pub epochs: Vec<EpochLog>,
    pub checkpoint: Checkpoint,
}

/// Per-head accuracy `[audio, visual_t, visual_at]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HeadAccuracy(pub [f64; 3]);

fn argmax_rows(t: &Tensor, cols: usize) -> Vec<usize> {
    t.data()
        .chunks(cols)
        .map(|r| r.iter().enumerate().fold((0, f32::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b }).0)
        .collect()
}

fn correct(heads: &PretrainLogits, la: &[usize], lv: &[usize], n: usize) -> [usize; 3] {
    let count = |t: &Tensor, l: &[usize]| argmax_rows(t, n).iter().zip(l).filter(|(p, y)| p == y).count();
    [count(&heads.audio, la), count(&heads.visual_t, lv), count(&heads.visual_at, lv)]
}

/// Dims needed to batch pre-training pairs.
#[derive(Clone, Copy, Debug)]
pub struct PairDims {
    pub feat_dim: usize,
    pub spatial: usize,
    pub text_dim: usize,
}

pub struct PretrainSetup<'a> {
    pub corpus: &'a [PretrainStream],
    pub config: &'a PretrainConfig,
    pub contextual: &'a ContextualConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub dims: PairDims,
    pub seed: u64,
}

/// Adam on the summed head losses over freshly sampled pairs each epoch.
pub fn run_pretraining(model: &CadModel, setup: &PretrainSetup<'_>) -> Result<PretrainReport> {
    let cfg = setup.config;
    cfg.validate()?;
    let params = model.params();
    let mut adam = AdamState::new(setup.adam);
    let mut sampler = PairSampler::new(setup.corpus, cfg.sampler(), stream_rng(setup.seed, Stream::Sampler, 0));
    let mut ctx_rng = stream_rng(setup.seed, Stream::Contextual, 1);
    let n = cfg.n_time_labels;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (mut loss_sum, mut seen, mut hits) = (0.0, 0usize, [0usize; 3]);
        let mut remaining = cfg.pairs_per_epoch;
        let mut step = 0;
        while remaining > 0 {
            let b = remaining.min(setup.batch_size);
            remaining -= b;
            let pairs = (0..b).map(|_| sampler.next_pair()).collect::<Result<Vec<_>>>()?;
            let (x, la, lv) = pair_batch(&pairs, setup.dims.feat_dim, setup.dims.spatial, setup.dims.text_dim)?;
            let heads = model.forward_pretrain(&x, setup.contextual, &mut ctx_rng, true)?;
            let loss = alignment_loss(&heads, &la, &lv)?;
            let value = loss.item() as f64;
            if !value.is_finite() {
                return Err(CadError::NonFiniteLoss { phase: "pretrain", epoch, step, value });
            }
            loss.backward()?;
            adam.step(&params)?;
            loss_sum += value * b as f64;
            seen += b;
            for (h, c) in hits.iter_mut().zip(correct(&heads, &la, &lv, n)) {
                *h += c;
            }
            step += 1;
        }
        let frac = |h: usize| h as f64 / seen.max(1) as f64;
        epochs.push(EpochLog {
            epoch,
            loss: loss_sum / seen.max(1) as f64,
            acc_audio: frac(hits[0]),
            acc_visual_t: frac(hits[1]),
            acc_visual_at: frac(hits[2]),
        });
    }
    Ok(PretrainReport {
        epochs,
        checkpoint: Checkpoint::from_params(&model.trunk_params()),
    })
}

/// Time-label accuracy of each head on positive pairs from `streams`,
/// with the contextual block in inference mode.
pub fn positive_pair_accuracy(
    model: &CadModel,
    streams: &[PretrainStream],
    cfg: &PretrainConfig,
    contextual: &ContextualConfig,
    dims: PairDims,
    n_pairs: usize,
    seed: u64,
) -> Result<HeadAccuracy> {
    let sampler_cfg = SamplerConfig { pos_prob: 1.0, ..cfg.sampler() };
    let mut sampler = PairSampler::new(streams, sampler_cfg, stream_rng(seed, Stream::HeldOut, 0));
    let mut ctx_rng = stream_rng(seed, Stream::HeldOut, 1);
    let mut hits = [0usize; 3];
    let mut remaining = n_pairs;
    while remaining > 0 {
        let b = remaining.min(256);
        remaining -= b;
        let pairs = (0..b).map(|_| sampler.next_pair()).collect::<Result<Vec<_>>>()?;
        let (x, la, lv) = pair_batch(&pairs, dims.feat_dim, dims.spatial, dims.text_dim)?;
        let heads = model.forward_pretrain(&x, contextual, &mut ctx_rng, false)?;
        for (h, c) in hits.iter_mut().zip(correct(&heads, &la, &lv, cfg.n_time_labels)) {
            *h += c;
        }
    }
    Ok(HeadAccuracy(hits.map(|h| h as f64 / n_pairs.max(1) as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    fn cues(n: usize, per_clip: usize) -> Vec<Cue> {
        let stream: Vec<f32> = (0..n).map(|i| i as f32).collect();
        segment_cues(&stream, 1, n, per_clip, Modality::Audio).unwrap()
    }

    #[test]
    fn segments_sixty_cues() {
        let c = cues(60, 10);
        assert_eq!(c.len(), 60);
        assert!(c.iter().enumerate().all(|(i, cue)| cue.time_label == i && cue.features == vec![i as f32]));
        assert!(c.iter().all(|cue| cue.time_label == cue.clip_index * 10 + cue.time_label % 10));
    }

    #[test]
    fn single_cue_holds_whole_stream() {
        let s: Vec<f32> = (0..12).map(|i| i as f32).collect();
        let c = segment_cues(&s, 3, 1, 10, Modality::Visual).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].features, s);
    }

    #[test]
    fn rejects_uneven_segmentation() {
        let err = segment_cues(&[0.0; 59], 1, 60, 10, Modality::Audio).unwrap_err();
        assert!(matches!(err, CadError::CueSegmentation { len: 59, n_cues: 60 }));
    }

    #[test]
    fn pair_polarity_matches_labels() {
        let (a, v) = (cues(12, 4), cues(12, 4));
        let cfg = SamplerConfig {
            n_time_labels: 12,
            cues_per_clip: 4,
            ..Default::default()
        };
        let mut r = rng(1);
        for _ in 0..2000 {
            let (ca, cv, pos) = sample_pair(&a, &v, &cfg, &mut r).unwrap();
            assert_eq!(pos, ca.time_label == cv.time_label);
        }
    }

    #[test]
    fn negative_needs_two_labels() {
        assert!(matches!(sample_labels(1, 0.6, &mut rng(0)), Err(CadError::TooFewLabels(1))));
    }

    #[test]
    fn query_selection_rules() {
        let a = cues(12, 4);
        let queries: Vec<Vec<f32>> = (0..3).map(|k| vec![k as f32]).collect();
        let mut toggle = QueryToggle::new();
        // Positive in clip 3 of a longer stream.
        let long = cues(40, 10);
        let qs: Vec<Vec<f32>> = (0..4).map(|k| vec![k as f32]).collect();
        assert_eq!(select_query(&long[33], &long[33], &qs, &mut toggle).unwrap(), &[3.0]);
        // Cross-clip negatives alternate audio, visual.
        assert_eq!(select_query(&a[1], &a[9], &queries, &mut toggle).unwrap(), &[0.0]);
        assert_eq!(select_query(&a[1], &a[9], &queries, &mut toggle).unwrap(), &[2.0]);
        // Within-clip negatives do not advance the toggle.
        assert_eq!(select_query(&a[4], &a[6], &queries, &mut toggle).unwrap(), &[1.0]);
        assert_eq!(select_query(&a[5], &a[0], &queries, &mut toggle).unwrap(), &[1.0]);
        assert!(matches!(select_query(&a[1], &a[9], &queries[..1], &mut toggle), Err(CadError::MissingClipQuery(2))));
    }

    #[test]
    fn streams_align_labels_and_prototypes() {
        let world = World::new(12, 4, 3, &mut rng(2));
        let cfg = PretrainConfig {
            n_time_labels: 12,
            cues_per_clip: 4,
            ..Default::default()
        };
        let shape = StreamShape {
            spatial: 5,
            object_positions: 2,
            noise: 0.0,
        };
        let s = generate_stream(&world, &cfg, shape, &mut rng(3)).unwrap();
        assert_eq!(s.clip_queries.len(), 3);
        for t in 0..12 {
            assert_eq!(s.audio[t].features, world.prototypes[t]);
            let hits = s.visual[t].features.chunks(4).filter(|tok| *tok == world.prototypes[t].as_slice()).count();
            assert_eq!(hits, 2);
        }
    }

    #[test]
    fn sampler_is_reproducible() {
        let world = World::new(12, 4, 3, &mut rng(4));
        let cfg = PretrainConfig {
            n_time_labels: 12,
            cues_per_clip: 4,
            ..Default::default()
        };
        let shape = StreamShape {
            spatial: 5,
            object_positions: 2,
            noise: 0.1,
        };
        let corpus = generate_corpus(&world, &cfg, shape, 5, Stream::PretrainCorpus, 3).unwrap();
        let draw = || {
            let mut s = PairSampler::new(&corpus, cfg.sampler(), rng(6));
            (0..50).map(|_| s.next_pair().unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }
}
