//! The four CLI commands. Each writes its artifacts and a manifest into the
//! run's output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::ablation::{ablation_tsv, run_ablation, summarize};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset_io::{content_hash, load_dataset, save_dataset};
use crate::error::{CadError, Result};
use crate::metrics::MetricsTable;
use crate::pipeline;
use crate::pretrain::EpochLog;
use crate::train::{evaluate, TrainEpochLog};

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub dataset_sha256: Option<String>,
    pub init_from: Option<PathBuf>,
    pub crate_version: String,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig, dataset_sha256: Option<String>) -> Self {
        Self {
            command: command.into(),
            seed: cfg.seed,
            config_sha256: hex::encode(Sha256::digest(cfg.to_toml().as_bytes())),
            dataset_sha256,
            init_from: cfg.init_from.clone(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        write_file(&out.join("manifest.json"), &(serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"))
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CadError::io(path, e))
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out).map_err(|e| CadError::io(&cfg.out, e))?;
    write_file(&cfg.out.join("config.toml"), &cfg.to_toml())?;
    Ok(cfg.out.clone())
}

pub fn pretrain_log_tsv(logs: &[EpochLog]) -> String {
    let mut out = String::from("epoch\tloss\tacc_audio\tacc_visual_t\tacc_visual_at\n");
    for l in logs {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.4}\t{:.4}\t{:.4}",
            l.epoch + 1,
            l.loss,
            l.acc_audio,
            l.acc_visual_t,
            l.acc_visual_at
        );
    }
    out
}

pub fn train_log_tsv(logs: &[TrainEpochLog]) -> String {
    let mut out = String::from("epoch\tloss\ttrain_accuracy\tvisual_token_fraction\n");
    for l in logs {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.4}\t{:.4}",
            l.epoch + 1,
            l.loss,
            l.train_accuracy,
            l.visual_token_fraction
        );
    }
    out
}

pub struct PretrainArtifacts {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub held_out: [f64; 3],
}

/// Writes `pretrain.cadw` (trunk only), `pretrain_log.tsv` and
/// `pretrain_heldout.tsv`.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<PretrainArtifacts> {
    let out = prepare_out(cfg)?;
    let world = pipeline::world(cfg);
    let res = pipeline::run_pretrain(cfg, &world)?;
    let checkpoint = out.join("pretrain.cadw");
    res.report.checkpoint.save(&checkpoint)?;
    let log = out.join("pretrain_log.tsv");
    write_file(&log, &pretrain_log_tsv(&res.report.epochs))?;
    let [a, vt, vat] = res.held_out.0;
    write_file(
        &out.join("pretrain_heldout.tsv"),
        &format!("head\taccuracy\naudio\t{a:.4}\nvisual_t\t{vt:.4}\nvisual_at\t{vat:.4}\n"),
    )?;
    Manifest::new("pretrain", cfg, None).write(&out)?;
    Ok(PretrainArtifacts {
        checkpoint,
        log,
        held_out: res.held_out.0,
    })
}

pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub metrics: MetricsTable,
    pub dataset: PathBuf,
}

/// Trains on the configured synthetic dataset, optionally from a
/// pre-trained trunk. Writes `model.cadw`, `train_log.tsv`, `metrics.tsv`
/// and the dataset itself under `dataset/`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainArtifacts> {
    let out = prepare_out(cfg)?;
    let world = pipeline::world(cfg);
    let data = pipeline::dataset(cfg, &world)?;
    let init = cfg.init_from.as_deref().map(Checkpoint::load).transpose()?;
    let res = pipeline::run_train(cfg, &data, init.as_ref())?;
    let checkpoint = out.join("model.cadw");
    Checkpoint::from_params(&res.model.params()).save(&checkpoint)?;
    write_file(&out.join("train_log.tsv"), &train_log_tsv(&res.logs))?;
    write_file(&out.join("metrics.tsv"), &res.metrics.to_tsv())?;
    let dataset = out.join("dataset");
    save_dataset(&data, &dataset)?;
    Manifest::new("train", cfg, Some(content_hash(&data))).write(&out)?;
    Ok(TrainArtifacts {
        checkpoint,
        metrics: res.metrics,
        dataset,
    })
}

/// Scores a full checkpoint on the test split of a dataset (the given
/// directory, or the one the config generates).
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, dataset: Option<&Path>) -> Result<MetricsTable> {
    let model = pipeline::answering_model(cfg)?;
    model.load_all(&Checkpoint::load(checkpoint)?)?;
    let data = match dataset {
        Some(dir) => load_dataset(dir)?,
        None => pipeline::dataset(cfg, &pipeline::world(cfg))?,
    };
    if data.config.feat_dim != cfg.data.feat_dim || data.config.text_dim != cfg.data.text_dim || data.config.spatial != cfg.data.spatial {
        return Err(CadError::Dataset("dataset feature dims disagree with the config".into()));
    }
    let mut dims = cfg.sample_dims();
    dims.n_cues = data.config.n_cues;
    let metrics = evaluate(&model, &data.test, dims, &cfg.contextual)?;
    let out = prepare_out(cfg)?;
    write_file(&out.join("eval_metrics.tsv"), &metrics.to_tsv())?;
    let mut manifest = Manifest::new("eval", cfg, Some(content_hash(&data)));
    manifest.init_from = Some(checkpoint.to_path_buf());
    manifest.write(&out)?;
    Ok(metrics)
}

/// Runs the ablation matrix and writes `ablation.tsv`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<String> {
    let out = prepare_out(cfg)?;
    let records = run_ablation(cfg)?;
    let tsv = ablation_tsv(&summarize(&records, &cfg.ablation.variants));
    write_file(&out.join("ablation.tsv"), &tsv)?;
    let mut runs = String::from("variant\tseed\toverall\n");
    for r in &records {
        let _ = writeln!(runs, "{}\t{}\t{:.4}", r.variant, r.seed, r.metrics.overall());
    }
    write_file(&out.join("ablation_runs.tsv"), &runs)?;
    Manifest::new("ablate", cfg, None).write(&out)?;
    Ok(tsv)
}
