//! The ablation matrix: every configured variant over every seed.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{CadError, Result};
use crate::metrics::MetricsTable;
use crate::model::{Inputs, Variant};
use crate::pipeline;
use crate::synthetic::{Category, Dataset, Scope, World};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoPretrain,
    NoContextual,
    #[serde(rename = "3ca_only")]
    ThreeCaOnly,
    #[serde(rename = "2ca")]
    TwoCa,
    #[serde(rename = "4ca")]
    FourCa,
    Q,
    Aq,
    Vq,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 9] = [
        AblationVariant::Full,
        AblationVariant::NoPretrain,
        AblationVariant::NoContextual,
        AblationVariant::ThreeCaOnly,
        AblationVariant::TwoCa,
        AblationVariant::FourCa,
        AblationVariant::Q,
        AblationVariant::Aq,
        AblationVariant::Vq,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoPretrain => "no_pretrain",
            AblationVariant::NoContextual => "no_contextual",
            AblationVariant::ThreeCaOnly => "3ca_only",
            AblationVariant::TwoCa => "2ca",
            AblationVariant::FourCa => "4ca",
            AblationVariant::Q => "q",
            AblationVariant::Aq => "aq",
            AblationVariant::Vq => "vq",
        }
    }

    /// Applies the graph edit to `base`; the flag says whether the run
    /// starts from a pre-trained trunk.
    pub fn configure(self, base: &RunConfig) -> (RunConfig, bool) {
        let mut cfg = base.clone();
        cfg.model.variant = Variant::ThreeCa;
        cfg.model.use_contextual = true;
        cfg.model.inputs = Inputs::Avq;
        let mut pretrained = true;
        match self {
            AblationVariant::Full => {}
            AblationVariant::NoPretrain => pretrained = false,
            AblationVariant::NoContextual => cfg.model.use_contextual = false,
            AblationVariant::ThreeCaOnly => {
                pretrained = false;
                cfg.model.use_contextual = false;
            }
            AblationVariant::TwoCa => cfg.model.variant = Variant::TwoCa,
            AblationVariant::FourCa => cfg.model.variant = Variant::FourCa,
            AblationVariant::Q => cfg.model.inputs = Inputs::Q,
            AblationVariant::Aq => cfg.model.inputs = Inputs::Aq,
            AblationVariant::Vq => cfg.model.inputs = Inputs::Vq,
        }
        (cfg, pretrained)
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AblationVariant {
    type Err = CadError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| CadError::Config(format!("unknown ablation variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub variants: Vec<AblationVariant>,
    pub seeds: Vec<u64>,
    /// Parallel runs; 1 is strictly sequential.
    pub workers: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            variants: AblationVariant::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            workers: 1,
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() || self.seeds.is_empty() || self.workers == 0 {
            return Err(CadError::Config("ablation needs at least one variant, one seed and one worker".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub variant: AblationVariant,
    pub seed: u64,
    pub metrics: MetricsTable,
}

/// Everything a seed's runs share: world, dataset and pre-trained trunks
/// keyed by whether the contextual block was active.
struct SeedContext {
    world: World,
    data: Dataset,
    trunks: Mutex<BTreeMap<bool, Checkpoint>>,
}

fn trunk_for(cfg: &RunConfig, ctx: &SeedContext) -> Result<Checkpoint> {
    let key = cfg.model.use_contextual;
    if let Some(ck) = ctx.trunks.lock().unwrap().get(&key) {
        return Ok(ck.clone());
    }
    let mut pre_cfg = cfg.clone();
    pre_cfg.model.variant = Variant::ThreeCa;
    pre_cfg.model.inputs = Inputs::Avq;
    let ck = pipeline::run_pretrain(&pre_cfg, &ctx.world)?.report.checkpoint;
    Ok(ctx.trunks.lock().unwrap().entry(key).or_insert(ck).clone())
}

fn run_one(base: &RunConfig, variant: AblationVariant, seed: u64, ctx: &SeedContext) -> Result<RunRecord> {
    let mut seeded = base.clone();
    seeded.seed = seed;
    let (cfg, pretrained) = variant.configure(&seeded);
    let init = if pretrained { Some(trunk_for(&cfg, ctx)?) } else { None };
    let out = pipeline::run_train(&cfg, &ctx.data, init.as_ref())?;
    Ok(RunRecord {
        variant,
        seed,
        metrics: out.metrics,
    })
}

/// Runs the matrix. Each run is deterministic on its own, and records are
/// sorted before aggregation, so the result is independent of scheduling.
pub fn run_ablation(base: &RunConfig) -> Result<Vec<RunRecord>> {
    base.ablation.validate()?;
    let mut contexts = BTreeMap::new();
    for &seed in &base.ablation.seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let world = pipeline::world(&cfg);
        let data = pipeline::dataset(&cfg, &world)?;
        contexts.insert(
            seed,
            SeedContext {
                world,
                data,
                trunks: Mutex::new(BTreeMap::new()),
            },
        );
    }
    let jobs: Vec<(AblationVariant, u64)> = base
        .ablation
        .variants
        .iter()
        .flat_map(|&v| base.ablation.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(jobs.len()));
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(variant, seed)) = jobs.get(i) else { break };
        let r = run_one(base, variant, seed, &contexts[&seed]).map_err(|e| CadError::Run {
            run: format!("{variant}/seed{seed}"),
            source: Box::new(e),
        });
        results.lock().unwrap().push((i, r));
    };
    let workers = base.ablation.workers.min(jobs.len());
    if workers <= 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, r)| r).collect()
}

/// Seed-mean accuracies of one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub seeds: usize,
    pub categories: [f64; 9],
    pub scopes: [f64; 3],
    pub overall: f64,
}

pub fn summarize(records: &[RunRecord], variants: &[AblationVariant]) -> Vec<AblationRow> {
    variants
        .iter()
        .map(|&variant| {
            let runs: Vec<&RunRecord> = records.iter().filter(|r| r.variant == variant).collect();
            let n = runs.len().max(1) as f64;
            let mut categories = [0.0; 9];
            let mut scopes = [0.0; 3];
            let mut overall = 0.0;
            for r in &runs {
                for row in &r.metrics.rows {
                    let c = Category { scope: row.scope, qtype: row.question_type };
                    categories[c.index()] += row.accuracy() / n;
                }
                for (k, scope) in [Scope::A, Scope::V, Scope::AV].into_iter().enumerate() {
                    scopes[k] += r.metrics.scope_average(scope).unwrap_or(0.0) / n;
                }
                overall += r.metrics.overall() / n;
            }
            AblationRow {
                variant,
                seeds: runs.len(),
                categories,
                scopes,
                overall,
            }
        })
        .collect()
}

pub fn ablation_tsv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant\tseeds");
    for c in Category::ALL {
        let _ = write!(out, "\t{}_{}", c.scope, c.qtype);
    }
    out.push_str("\tA_avg\tV_avg\tAV_avg\toverall\n");
    for r in rows {
        let _ = write!(out, "{}\t{}", r.variant, r.seeds);
        for v in r.categories.iter().chain(&r.scopes).chain(std::iter::once(&r.overall)) {
            let _ = write!(out, "\t{v:.4}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_labels_roundtrip() {
        for v in AblationVariant::ALL {
            assert_eq!(v.label().parse::<AblationVariant>().unwrap(), v);
        }
        assert!("5ca".parse::<AblationVariant>().is_err());
    }

    #[test]
    fn variants_are_single_edits() {
        let base = RunConfig::default();
        let (full, p) = AblationVariant::Full.configure(&base);
        assert!(p && full.model.use_contextual && full.model.variant == Variant::ThreeCa);
        let (c, p) = AblationVariant::ThreeCaOnly.configure(&base);
        assert!(!p && !c.model.use_contextual);
        let (c, p) = AblationVariant::Vq.configure(&base);
        assert!(p && c.model.inputs == Inputs::Vq);
        let (c, _) = AblationVariant::TwoCa.configure(&base);
        assert_eq!(c.model.variant, Variant::TwoCa);
    }

    #[test]
    fn summary_means_over_seeds() {
        let cat = Category::ALL[0];
        let rec = |variant, seed, ok: bool| RunRecord {
            variant,
            seed,
            metrics: MetricsTable::from_outcomes(vec![(cat, ok)]),
        };
        let records = vec![rec(AblationVariant::Full, 0, true), rec(AblationVariant::Full, 1, false)];
        let rows = summarize(&records, &[AblationVariant::Full]);
        assert_eq!(rows[0].overall, 0.5);
        assert_eq!(rows[0].categories[0], 0.5);
        let tsv = ablation_tsv(&rows);
        assert!(tsv.lines().nth(1).unwrap().starts_with("full\t2\t0.5000"));
    }
}
