use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cad_core::ablation::AblationVariant;
use cad_core::commands;
use cad_core::config::RunConfig;
use cad_core::model::Inputs;
use cad_core::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cad", version, about = "Audio-visual question answering with cross-attention and contextual blocks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train the trunk on the alignment task.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Train the answering model, optionally from a pre-trained trunk.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        init_from: Option<PathBuf>,
        /// Apply one ablation edit before training.
        #[arg(long)]
        variant: Option<AblationVariant>,
        /// Restrict the input modalities (Q, AQ, VQ, AVQ).
        #[arg(long)]
        inputs: Option<Inputs>,
    },
    /// Score a trained checkpoint on a dataset's test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Saved dataset directory; defaults to regenerating from the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run the ablation matrix.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn print_tsv(path: &Path, body: &str) {
    println!("{}", path.display());
    print!("{body}");
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { common } => {
            let cfg = load(&common)?;
            let a = commands::cmd_pretrain(&cfg)?;
            let [x, y, z] = a.held_out;
            println!("wrote {}", a.checkpoint.display());
            println!("held-out positive-pair accuracy: audio {x:.4} visual_t {y:.4} visual_at {z:.4}");
        }
        Command::Train { common, init_from, variant, inputs } => {
            let mut cfg = load(&common)?;
            if let Some(v) = variant {
                let (edited, _) = v.configure(&cfg);
                cfg = edited;
            }
            if let Some(i) = inputs {
                cfg.model.inputs = i;
            }
            if init_from.is_some() {
                cfg.init_from = init_from;
            }
            cfg.validate()?;
            let a = commands::cmd_train(&cfg)?;
            println!("wrote {}", a.checkpoint.display());
            print_tsv(&cfg.out.join("metrics.tsv"), &a.metrics.to_tsv());
        }
        Command::Eval { common, checkpoint, dataset } => {
            let cfg = load(&common)?;
            let metrics = commands::cmd_eval(&cfg, &checkpoint, dataset.as_deref())?;
            print_tsv(&cfg.out.join("eval_metrics.tsv"), &metrics.to_tsv());
        }
        Command::Ablate { common } => {
            let mut cfg = load(&common)?;
            if let Some(s) = common.seed {
                for x in cfg.ablation.seeds.iter_mut() {
                    *x += s;
                }
            }
            let tsv = commands::cmd_ablate(&cfg)?;
            print_tsv(&cfg.out.join("ablation.tsv"), &tsv);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
