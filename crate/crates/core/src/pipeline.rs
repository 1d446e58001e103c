//! End-to-end steps shared by the CLI and the ablation runner.

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::Result;
use crate::metrics::MetricsTable;
use crate::model::CadModel;
use crate::pretrain::{self, HeadAccuracy, PretrainReport, PretrainSetup};
use crate::seed::{stream_rng, Stream};
use crate::synthetic::{make_dataset, Dataset, World};
use crate::train::{evaluate, train_answering, TrainEpochLog, TrainSetup};

pub fn world(cfg: &RunConfig) -> World {
    World::for_seed(cfg.seed, cfg.n_prototypes(), cfg.data.feat_dim, cfg.data.text_dim)
}

pub fn dataset(cfg: &RunConfig, world: &World) -> Result<Dataset> {
    make_dataset(&cfg.data, world, cfg.seed)
}

pub fn pretraining_model(cfg: &RunConfig) -> Result<CadModel> {
    CadModel::for_pretraining(
        cfg.model.clone(),
        &mut stream_rng(cfg.seed, Stream::ModelInit, 0),
        &mut stream_rng(cfg.seed, Stream::AnswerHeadInit, 1),
    )
}

pub fn answering_model(cfg: &RunConfig) -> Result<CadModel> {
    CadModel::for_answering(
        cfg.model.clone(),
        &mut stream_rng(cfg.seed, Stream::ModelInit, 0),
        &mut stream_rng(cfg.seed, Stream::AnswerHeadInit, 0),
    )
}

pub struct PretrainOutcome {
    pub model: CadModel,
    pub report: PretrainReport,
    pub held_out: HeadAccuracy,
}

/// Pre-trains on a fresh synthetic corpus and scores positive pairs from
/// held-out streams.
pub fn run_pretrain(cfg: &RunConfig, world: &World) -> Result<PretrainOutcome> {
    let p = &cfg.pretrain;
    let corpus = pretrain::generate_corpus(world, p, cfg.stream_shape(), cfg.seed, Stream::PretrainCorpus, p.n_streams)?;
    let held = pretrain::generate_corpus(world, p, cfg.stream_shape(), cfg.seed, Stream::HeldOut, p.held_out_streams)?;
    let model = pretraining_model(cfg)?;
    let setup = PretrainSetup {
        corpus: &corpus,
        config: p,
        contextual: &cfg.contextual,
        adam: cfg.optimizer.adam(),
        batch_size: cfg.optimizer.batch_size,
        dims: cfg.pair_dims(),
        seed: cfg.seed,
    };
    let report = pretrain::run_pretraining(&model, &setup)?;
    let n_pairs = 100 * p.n_time_labels;
    let held_out = pretrain::positive_pair_accuracy(&model, &held, p, &cfg.contextual, cfg.pair_dims(), n_pairs, cfg.seed)?;
    Ok(PretrainOutcome { model, report, held_out })
}

pub struct TrainOutcome {
    pub model: CadModel,
    pub logs: Vec<TrainEpochLog>,
    pub metrics: MetricsTable,
}

pub fn run_train(cfg: &RunConfig, data: &Dataset, init: Option<&Checkpoint>) -> Result<TrainOutcome> {
    let model = answering_model(cfg)?;
    if let Some(ck) = init {
        model.init_from_pretrained(ck)?;
    }
    let setup = TrainSetup {
        train: &data.train,
        dims: cfg.sample_dims(),
        optimizer: &cfg.optimizer,
        contextual: &cfg.contextual,
        seed: cfg.seed,
    };
    let logs = train_answering(&model, &setup)?;
    let metrics = evaluate(&model, &data.test, cfg.sample_dims(), &cfg.contextual)?;
    Ok(TrainOutcome { model, logs, metrics })
}
