//! Prototype-plus-noise audio/visual/text features with known ground truth.
//!
//! A [`World`] fixes a bank of class prototypes shared by both modalities
//! (audio dim equals visual channel count), text embeddings per class and
//! one token per question category. Episodes place classes on the cue
//! timeline of each modality; questions are answered from the episode spec
//! alone.

use std::fmt;

use rand::seq::{index::sample, IndexedRandom, SliceRandom};
use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CadError, Result};
use crate::seed::{stream_rng, Rng, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    /// Cues per QA episode; both streams have one frame per cue.
    pub n_cues: usize,
    pub spatial: usize,
    /// Audio feature dim and visual channel count.
    pub feat_dim: usize,
    pub text_dim: usize,
    pub max_active: usize,
    /// Std of the Gaussian perturbation added to every feature.
    pub noise: f64,
    /// Spatial positions a visible class occupies.
    pub object_positions: usize,
    pub min_duration: usize,
    pub max_duration: usize,
    /// Probability an active class appears in both modalities; the rest
    /// splits evenly between audio-only and visual-only.
    pub both_prob: f64,
    /// Probability a two-modality class has identical intervals.
    pub sync_prob: f64,
    pub n_episodes: usize,
    pub split: [f64; 3],
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_classes: 12,
            n_cues: 8,
            spatial: 10,
            feat_dim: 16,
            text_dim: 16,
            max_active: 3,
            noise: 0.3,
            object_positions: 3,
            min_duration: 2,
            max_duration: 3,
            both_prob: 0.6,
            sync_prob: 0.5,
            n_episodes: 2000,
            split: [0.8, 0.1, 0.1],
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CadError::Config(m));
        if self.n_classes < 2 || self.max_active == 0 || self.max_active > self.n_classes {
            return fail(format!(
                "data.max_active = {} must be in 1..=n_classes ({})",
                self.max_active, self.n_classes
            ));
        }
        if self.min_duration == 0 || self.min_duration > self.max_duration || self.max_duration * 2 > self.n_cues {
            return fail(format!(
                "durations {}..={} must be positive and fit twice into {} cues",
                self.min_duration, self.max_duration, self.n_cues
            ));
        }
        if self.max_active > self.n_cues.saturating_sub(self.min_duration) + 1 {
            return fail("data.n_cues is too short for distinct onsets of max_active classes".into());
        }
        if self.object_positions == 0 || self.object_positions > self.spatial {
            return fail("data.object_positions must be in 1..=spatial".into());
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return fail("data.noise must be finite and non-negative".into());
        }
        for p in [self.both_prob, self.sync_prob] {
            if !(0.0..=1.0).contains(&p) {
                return fail("data probabilities must lie in [0, 1]".into());
            }
        }
        if self.n_episodes == 0 || self.split.iter().any(|&r| r < 0.0) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return fail("data.n_episodes must be positive and data.split must sum to 1".into());
        }
        Ok(())
    }

    pub fn vocab(&self) -> AnswerVocab {
        AnswerVocab {
            max_count: self.max_active,
            n_classes: self.n_classes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scope {
    A,
    V,
    AV,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionType {
    Exist,
    Count,
    Temporal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Category {
    pub scope: Scope,
    pub qtype: QuestionType,
}

impl Category {
    pub const ALL: [Category; 9] = {
        use QuestionType::*;
        use Scope::*;
        [
            Category { scope: A, qtype: Exist },
            Category { scope: A, qtype: Count },
            Category { scope: A, qtype: Temporal },
            Category { scope: V, qtype: Exist },
            Category { scope: V, qtype: Count },
            Category { scope: V, qtype: Temporal },
            Category { scope: AV, qtype: Exist },
            Category { scope: AV, qtype: Count },
            Category { scope: AV, qtype: Temporal },
        ]
    };

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).expect("every category is listed")
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::A => "A",
            Scope::V => "V",
            Scope::AV => "AV",
        })
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuestionType::Exist => "exist",
            QuestionType::Count => "count",
            QuestionType::Temporal => "temporal",
        })
    }
}

/// Answer index layout: `no`, `yes`, counts `0..=max_count`, class ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnswerVocab {
    pub max_count: usize,
    pub n_classes: usize,
}

impl AnswerVocab {
    pub const NO: usize = 0;
    pub const YES: usize = 1;

    pub fn size(&self) -> usize {
        3 + self.max_count + self.n_classes
    }

    pub fn boolean(&self, b: bool) -> usize {
        if b {
            Self::YES
        } else {
            Self::NO
        }
    }

    pub fn count(&self, n: usize) -> usize {
        assert!(n <= self.max_count, "count {n} exceeds vocabulary");
        2 + n
    }

    pub fn class(&self, k: usize) -> usize {
        assert!(k < self.n_classes, "class {k} exceeds vocabulary");
        3 + self.max_count + k
    }
}

/// Active cue range `[onset, offset)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub onset: usize,
    pub offset: usize,
}

impl Interval {
    pub fn contains(&self, cue: usize) -> bool {
        (self.onset..self.offset).contains(&cue)
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.onset < other.offset && other.onset < self.offset
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveClass {
    pub class: usize,
    pub audio: Option<Interval>,
    pub visual: Option<Interval>,
    /// Spatial positions occupied while visible.
    pub positions: Vec<usize>,
}

impl ActiveClass {
    pub fn heard(&self) -> bool {
        self.audio.is_some()
    }

    pub fn seen(&self) -> bool {
        self.visual.is_some()
    }

    /// Heard and seen over the same cues.
    pub fn synchronized(&self) -> bool {
        matches!((self.audio, self.visual), (Some(a), Some(v)) if a == v)
    }

    pub fn satisfies(&self, scope: Scope) -> bool {
        match scope {
            Scope::A => self.heard(),
            Scope::V => self.seen(),
            Scope::AV => self.synchronized(),
        }
    }

    /// Onset used for "which came first" in the given scope.
    pub fn onset(&self, scope: Scope) -> Option<usize> {
        match scope {
            Scope::A => self.audio.map(|i| i.onset),
            Scope::V => self.visual.map(|i| i.onset),
            Scope::AV => self.synchronized().then(|| self.audio.unwrap().onset),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n_classes: usize,
    pub n_cues: usize,
    pub spatial: usize,
    pub feat_dim: usize,
    pub text_dim: usize,
    pub active: Vec<ActiveClass>,
    pub alignment_noise: f64,
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.alignment_noise < 0.0 {
            return Err(CadError::Config("alignment noise must be non-negative".into()));
        }
        for c in &self.active {
            for i in [c.audio, c.visual].into_iter().flatten() {
                if i.onset >= i.offset || i.offset > self.n_cues {
                    return Err(CadError::Config(format!("class {} has invalid interval {i:?}", c.class)));
                }
            }
            if c.class >= self.n_classes || c.positions.iter().any(|&p| p >= self.spatial) {
                return Err(CadError::Config(format!("class {} is out of range", c.class)));
            }
        }
        Ok(())
    }
}

/// Shared bank of prototypes and text embeddings for one seed.
#[derive(Clone, Debug)]
pub struct World {
    pub prototypes: Vec<Vec<f32>>,
    pub class_text: Vec<Vec<f32>>,
    pub category_tokens: Vec<Vec<f32>>,
    pub caption_token: Vec<f32>,
    pub feat_dim: usize,
    pub text_dim: usize,
}

fn normal_vec(rng: &mut Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) as f32).collect()
}

impl World {
    /// `n_prototypes` may exceed `n_classes` when pre-training uses more
    /// time labels than there are answerable classes.
    pub fn new(n_prototypes: usize, feat_dim: usize, text_dim: usize, rng: &mut Rng) -> Self {
        let prototypes = (0..n_prototypes).map(|_| normal_vec(rng, feat_dim)).collect();
        let class_text = (0..n_prototypes).map(|_| normal_vec(rng, text_dim)).collect();
        let category_tokens = (0..Category::ALL.len()).map(|_| normal_vec(rng, text_dim)).collect();
        let caption_token = normal_vec(rng, text_dim);
        Self {
            prototypes,
            class_text,
            category_tokens,
            caption_token,
            feat_dim,
            text_dim,
        }
    }

    pub fn for_seed(seed: u64, n_prototypes: usize, feat_dim: usize, text_dim: usize) -> Self {
        Self::new(n_prototypes, feat_dim, text_dim, &mut stream_rng(seed, Stream::World, 0))
    }

    /// Query for a clip containing `classes`: caption token then the mean
    /// class embedding (zeros for an empty clip).
    pub fn clip_query(&self, classes: &[usize]) -> Vec<f32> {
        let mut q = self.caption_token.clone();
        let mut mean = vec![0f64; self.text_dim];
        for &k in classes {
            for (m, &x) in mean.iter_mut().zip(&self.class_text[k]) {
                *m += x as f64;
            }
        }
        let n = classes.len().max(1) as f64;
        q.extend(mean.iter().map(|&m| (m / n) as f32));
        q
    }

    /// Two question tokens: the category token and the subject class
    /// embedding (zeros when the question has no subject).
    pub fn question_features(&self, q: &Question) -> Vec<f32> {
        let mut f = self.category_tokens[q.category.index()].clone();
        match q.subject {
            Some(k) => f.extend_from_slice(&self.class_text[k]),
            None => f.extend(std::iter::repeat_n(0.0, self.text_dim)),
        }
        f
    }
}

/// Question tokens per sample.
pub const QUESTION_LEN: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub category: Category,
    pub subject: Option<usize>,
}

/// Features of one episode: audio `[n_cues, c]`, visual `[n_cues, s, c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub audio: Vec<f32>,
    pub visual: Vec<f32>,
    /// One `[2, text_dim]` query per clip of `cues_per_clip` cues.
    pub clip_queries: Vec<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QASample {
    pub question: Question,
    pub features: Vec<f32>,
    pub category: Category,
    pub answer: usize,
}

/// One QA example as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub audio: Vec<f32>,
    pub visual: Vec<f32>,
    pub question: Vec<f32>,
    pub category: Category,
    pub answer: usize,
}

fn interval(rng: &mut Rng, cfg: &SyntheticConfig) -> Interval {
    let len = rng.random_range(cfg.min_duration..=cfg.max_duration);
    let onset = rng.random_range(0..=cfg.n_cues - len);
    Interval { onset, offset: onset + len }
}

fn distinct_onsets(active: &[ActiveClass], pick: impl Fn(&ActiveClass) -> Option<Interval>) -> bool {
    let mut on: Vec<usize> = active.iter().filter_map(|c| pick(c).map(|i| i.onset)).collect();
    let n = on.len();
    on.sort_unstable();
    on.dedup();
    on.len() == n
}

/// Draws the active set: 1..=max_active classes, modality presence and
/// intervals, rejecting layouts with tied onsets.
pub fn sample_spec(cfg: &SyntheticConfig, seed: u64, rng: &mut Rng) -> EpisodeSpec {
    let n_active = rng.random_range(1..=cfg.max_active);
    let classes = sample(rng, cfg.n_classes, n_active).into_vec();
    loop {
        let active: Vec<ActiveClass> = classes
            .iter()
            .map(|&class| {
                let r: f64 = rng.random();
                let (heard, seen) = if r < cfg.both_prob {
                    (true, true)
                } else if r < cfg.both_prob + (1.0 - cfg.both_prob) / 2.0 {
                    (true, false)
                } else {
                    (false, true)
                };
                let (audio, visual) = match (heard, seen) {
                    (true, true) if rng.random::<f64>() < cfg.sync_prob => {
                        let i = interval(rng, cfg);
                        (Some(i), Some(i))
                    }
                    (true, true) => loop {
                        let (a, v) = (interval(rng, cfg), interval(rng, cfg));
                        if !a.overlaps(&v) {
                            break (Some(a), Some(v));
                        }
                    },
                    (true, false) => (Some(interval(rng, cfg)), None),
                    _ => (None, Some(interval(rng, cfg))),
                };
                let mut positions = sample(rng, cfg.spatial, cfg.object_positions).into_vec();
                positions.sort_unstable();
                ActiveClass { class, audio, visual, positions }
            })
            .collect();
        if distinct_onsets(&active, |c| c.audio) && distinct_onsets(&active, |c| c.visual) {
            return EpisodeSpec {
                n_classes: cfg.n_classes,
                n_cues: cfg.n_cues,
                spatial: cfg.spatial,
                feat_dim: cfg.feat_dim,
                text_dim: cfg.text_dim,
                active,
                alignment_noise: cfg.noise,
                seed,
            };
        }
    }
}

/// Renders the streams of `spec`. Deterministic given the spec's seed.
pub fn generate_episode(spec: &EpisodeSpec, world: &World, cues_per_clip: usize) -> Episode {
    let mut rng = Rng::seed_from_u64(spec.seed);
    let (n, s, c) = (spec.n_cues, spec.spatial, spec.feat_dim);
    let sigma = spec.alignment_noise;
    let mut noise = |len: usize| -> Vec<f32> { normal_vec(&mut rng, len).into_iter().map(|x| (sigma * x as f64) as f32).collect() };
    let mut audio = noise(n * c);
    let mut visual = noise(n * s * c);
    for ac in &spec.active {
        let proto = &world.prototypes[ac.class];
        if let Some(i) = ac.audio {
            for cue in i.onset..i.offset {
                for (x, &p) in audio[cue * c..(cue + 1) * c].iter_mut().zip(proto) {
                    *x += p;
                }
            }
        }
        if let Some(i) = ac.visual {
            for cue in i.onset..i.offset {
                for &pos in &ac.positions {
                    let at = (cue * s + pos) * c;
                    for (x, &p) in visual[at..at + c].iter_mut().zip(proto) {
                        *x += p;
                    }
                }
            }
        }
    }
    let cues_per_clip = cues_per_clip.max(1);
    let clip_queries = (0..n.div_ceil(cues_per_clip))
        .map(|clip| {
            let span = Interval {
                onset: clip * cues_per_clip,
                offset: ((clip + 1) * cues_per_clip).min(n),
            };
            let classes: Vec<usize> = spec
                .active
                .iter()
                .filter(|ac| [ac.audio, ac.visual].into_iter().flatten().any(|i| i.overlaps(&span)))
                .map(|ac| ac.class)
                .collect();
            world.clip_query(&classes)
        })
        .collect();
    Episode { audio, visual, clip_queries }
}

/// Ground-truth answer, computed from the spec only.
pub fn answer_for(spec: &EpisodeSpec, q: &Question, vocab: &AnswerVocab) -> Option<usize> {
    let scope = q.category.scope;
    let matching: Vec<&ActiveClass> = spec.active.iter().filter(|c| c.satisfies(scope)).collect();
    match q.category.qtype {
        QuestionType::Exist => {
            let k = q.subject?;
            Some(vocab.boolean(matching.iter().any(|c| c.class == k)))
        }
        QuestionType::Count => Some(vocab.count(matching.len())),
        QuestionType::Temporal => matching.iter().min_by_key(|c| c.onset(scope)).map(|c| vocab.class(c.class)),
    }
}

/// Picks a question for `spec`. Existential questions ask about a
/// satisfying class half the time; otherwise a near miss (a class active in
/// some other way) is preferred over an absent one. Returns `None` when the
/// category has no valid question for this spec.
pub fn pick_question(spec: &EpisodeSpec, category: Category, rng: &mut Rng) -> Option<Question> {
    let scope = category.scope;
    match category.qtype {
        QuestionType::Exist => {
            let pos: Vec<usize> = spec.active.iter().filter(|c| c.satisfies(scope)).map(|c| c.class).collect();
            let near: Vec<usize> = spec.active.iter().filter(|c| !c.satisfies(scope)).map(|c| c.class).collect();
            let absent: Vec<usize> = (0..spec.n_classes).filter(|k| !spec.active.iter().any(|c| c.class == *k)).collect();
            let subject = if !pos.is_empty() && rng.random::<f64>() < 0.5 {
                *pos.choose(rng).unwrap()
            } else if !near.is_empty() && rng.random::<f64>() < 0.5 {
                *near.choose(rng).unwrap()
            } else {
                *absent.choose(rng)?
            };
            Some(Question { category, subject: Some(subject) })
        }
        QuestionType::Count => Some(Question { category, subject: None }),
        QuestionType::Temporal => spec
            .active
            .iter()
            .any(|c| c.satisfies(scope))
            .then_some(Question { category, subject: None }),
    }
}

pub fn generate_qa(spec: &EpisodeSpec, world: &World, category: Category, vocab: &AnswerVocab, rng: &mut Rng) -> Option<QASample> {
    let question = pick_question(spec, category, rng)?;
    let answer = answer_for(spec, &question, vocab)?;
    Some(QASample {
        question,
        features: world.question_features(&question),
        category,
        answer,
    })
}

/// A labelled example together with the spec that produced it.
#[derive(Clone, Debug)]
pub struct Item {
    pub spec: EpisodeSpec,
    pub qa: QASample,
    pub sample: Sample,
}

/// Draws one item: a uniformly random category, then episodes until one
/// admits a question of that category.
pub fn generate_item(cfg: &SyntheticConfig, world: &World, seed: u64, index: u64) -> Item {
    let mut rng = stream_rng(seed, Stream::Dataset, index);
    let category = Category::ALL[rng.random_range(0..Category::ALL.len())];
    let vocab = cfg.vocab();
    loop {
        let spec_seed = rng.random();
        let spec = sample_spec(cfg, spec_seed, &mut rng);
        if let Some(qa) = generate_qa(&spec, world, category, &vocab, &mut rng) {
            let ep = generate_episode(&spec, world, cfg.n_cues);
            let sample = Sample {
                audio: ep.audio,
                visual: ep.visual,
                question: qa.features.clone(),
                category,
                answer: qa.answer,
            };
            return Item { spec, qa, sample };
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Split sizes by rounding the train and val shares; test takes the rest.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> SplitSizes {
    let train = ((n as f64 * ratios[0]).round() as usize).min(n);
    let val = ((n as f64 * ratios[1]).round() as usize).min(n - train);
    SplitSizes { train, val, test: n - train - val }
}

/// Seeded permutation cut into train/val/test index lists.
pub fn split_indices(n: usize, ratios: [f64; 3], seed: u64) -> [Vec<usize>; 3] {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, Stream::Split, 0));
    let sizes = split_sizes(n, ratios);
    let test = idx.split_off(sizes.train + sizes.val);
    let val = idx.split_off(sizes.train);
    [idx, val, test]
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: SyntheticConfig,
    pub seed: u64,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn category_counts(&self) -> [[usize; 9]; 3] {
        let mut out = [[0; 9]; 3];
        for (split, samples) in [&self.train, &self.val, &self.test].into_iter().enumerate() {
            for s in samples {
                out[split][s.category.index()] += 1;
            }
        }
        out
    }
}

pub fn make_dataset(cfg: &SyntheticConfig, world: &World, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let items: Vec<Sample> = (0..cfg.n_episodes as u64).map(|i| generate_item(cfg, world, seed, i).sample).collect();
    let [tr, va, te] = split_indices(items.len(), cfg.split, seed);
    let pick = |ix: &[usize]| ix.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok(Dataset {
        config: cfg.clone(),
        seed,
        train: pick(&tr),
        val: pick(&va),
        test: pick(&te),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(cfg: &SyntheticConfig) -> World {
        World::for_seed(1, cfg.n_classes, cfg.feat_dim, cfg.text_dim)
    }

    fn spec_with(active: Vec<ActiveClass>) -> EpisodeSpec {
        EpisodeSpec {
            n_classes: 12,
            n_cues: 8,
            spatial: 10,
            feat_dim: 16,
            text_dim: 16,
            active,
            alignment_noise: 0.0,
            seed: 3,
        }
    }

    fn class(k: usize, a: Option<(usize, usize)>, v: Option<(usize, usize)>) -> ActiveClass {
        let iv = |(onset, offset)| Interval { onset, offset };
        ActiveClass {
            class: k,
            audio: a.map(iv),
            visual: v.map(iv),
            positions: vec![0, 1],
        }
    }

    #[test]
    fn vocab_layout() {
        let v = SyntheticConfig::default().vocab();
        assert_eq!(v.size(), 18);
        assert_eq!((v.boolean(false), v.boolean(true)), (0, 1));
        assert_eq!(v.count(3), 5);
        assert_eq!(v.class(0), 6);
    }

    #[test]
    fn counting_three_classes() {
        let spec = spec_with(vec![class(0, Some((0, 2)), None), class(4, Some((2, 4)), None), class(7, Some((5, 7)), None)]);
        let v = SyntheticConfig::default().vocab();
        let q = Question {
            category: Category { scope: Scope::A, qtype: QuestionType::Count },
            subject: None,
        };
        assert_eq!(answer_for(&spec, &q, &v), Some(v.count(3)));
    }

    #[test]
    fn temporal_picks_first_onset() {
        let spec = spec_with(vec![class(9, None, Some((5, 7))), class(2, None, Some((2, 4)))]);
        let v = SyntheticConfig::default().vocab();
        let q = Question {
            category: Category { scope: Scope::V, qtype: QuestionType::Temporal },
            subject: None,
        };
        assert_eq!(answer_for(&spec, &q, &v), Some(v.class(2)));
    }

    #[test]
    fn av_scope_requires_synchrony() {
        let spec = spec_with(vec![class(1, Some((0, 2)), Some((4, 6))), class(3, Some((3, 5)), Some((3, 5)))]);
        let v = SyntheticConfig::default().vocab();
        let ask = |k| Question {
            category: Category { scope: Scope::AV, qtype: QuestionType::Exist },
            subject: Some(k),
        };
        assert_eq!(answer_for(&spec, &ask(1), &v), Some(AnswerVocab::NO));
        assert_eq!(answer_for(&spec, &ask(3), &v), Some(AnswerVocab::YES));
    }

    #[test]
    fn episodes_are_seed_deterministic() {
        let cfg = SyntheticConfig::default();
        let w = world(&cfg);
        let a = generate_item(&cfg, &w, 5, 17);
        let b = generate_item(&cfg, &w, 5, 17);
        assert_eq!(a.sample, b.sample);
        assert_eq!(a.spec, b.spec);
    }

    #[test]
    fn empty_active_set_is_pure_noise() {
        let cfg = SyntheticConfig::default();
        let w = world(&cfg);
        let mut spec = spec_with(vec![]);
        spec.alignment_noise = 0.0;
        let ep = generate_episode(&spec, &w, 4);
        assert!(ep.audio.iter().chain(&ep.visual).all(|&x| x == 0.0));
        spec.alignment_noise = 1.0;
        let ep = generate_episode(&spec, &w, 4);
        let var = ep.audio.iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / ep.audio.len() as f64;
        assert!((var - 1.0).abs() < 0.5);
    }

    #[test]
    fn sampled_specs_are_valid() {
        let cfg = SyntheticConfig::default();
        let mut rng = stream_rng(0, Stream::Dataset, 0);
        for i in 0..500 {
            let spec = sample_spec(&cfg, i, &mut rng);
            spec.validate().unwrap();
            assert!(!spec.active.is_empty() && spec.active.len() <= cfg.max_active);
            for c in &spec.active {
                if let (Some(a), Some(v)) = (c.audio, c.visual) {
                    assert!(a == v || !a.overlaps(&v));
                }
            }
        }
    }

    #[test]
    fn splits_partition_exactly() {
        for n in [1, 7, 10, 1001] {
            let s = split_sizes(n, [0.8, 0.1, 0.1]);
            assert_eq!(s.train + s.val + s.test, n);
            let [a, b, c] = split_indices(n, [0.8, 0.1, 0.1], 4);
            let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
        assert_eq!(split_indices(50, [0.8, 0.1, 0.1], 9), split_indices(50, [0.8, 0.1, 0.1], 9));
        assert_ne!(split_indices(50, [0.8, 0.1, 0.1], 9), split_indices(50, [0.8, 0.1, 0.1], 10));
    }

    #[test]
    fn clip_queries_encode_active_classes() {
        let cfg = SyntheticConfig::default();
        let w = world(&cfg);
        let spec = spec_with(vec![class(2, Some((0, 2)), None), class(5, None, Some((5, 7)))]);
        let ep = generate_episode(&spec, &w, 4);
        assert_eq!(ep.clip_queries.len(), 2);
        assert_eq!(ep.clip_queries[0], w.clip_query(&[2]));
        assert_eq!(ep.clip_queries[1], w.clip_query(&[5]));
    }

    #[test]
    fn config_validation() {
        assert!(SyntheticConfig::default().validate().is_ok());
        assert!(SyntheticConfig { max_duration: 5, ..Default::default() }.validate().is_err());
        assert!(SyntheticConfig { noise: -1.0, ..Default::default() }.validate().is_err());
        assert!(SyntheticConfig { split: [0.5, 0.1, 0.1], ..Default::default() }.validate().is_err());
    }
}
