//! `rikd`: experiment harness for reinforced iterative knowledge distillation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{Mode, Preset, RunConfig};

#[derive(Parser)]
#[command(name = "rikd", version, about = "Cross-lingual sequence labeling by reinforced iterative distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// desk-scale (default) or paper-scale.
    #[arg(long)]
    preset: Option<Preset>,
    /// Threads for intra-batch inference.
    #[arg(long)]
    workers: Option<usize>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bilingual corpus.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train the source model M_0 on labeled source data.
    TrainSource {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
    },
    /// One distillation iteration from a fixed teacher.
    Distill {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        unlabeled: Option<PathBuf>,
        /// Labeled corpus used to pick the best intermediate student.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Labeled target corpus scored after each iteration (reporting only).
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        keep_ratio: Option<f64>,
    },
    /// Full iterative run, M_1 .. M_K.
    Rikd {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        unlabeled: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Restart after iteration K using the checkpoints already in `--out`.
        #[arg(long, value_name = "K")]
        resume_from: Option<usize>,
    },
    /// Entity F1 of a model on a labeled corpus.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
}

fn resolve(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref(), common.preset, &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    if let Some(n) = common.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { common } => commands::synth(&resolve(&common)?),
        Command::TrainSource { common, train, dev } => {
            let mut cfg = resolve(&common)?;
            cfg.source_train = train.or(cfg.source_train);
            cfg.source_dev = dev.or(cfg.source_dev);
            commands::train_source(&cfg)
        }
        Command::Distill { common, mode, teacher, unlabeled, dev, test, keep_ratio } => {
            let mut cfg = resolve(&common)?;
            cfg.mode = mode.unwrap_or(cfg.mode);
            cfg.keep_ratio = keep_ratio.unwrap_or(cfg.keep_ratio);
            cfg.teacher = teacher.or(cfg.teacher);
            cfg.target_unlabeled = unlabeled.or(cfg.target_unlabeled);
            cfg.source_dev = dev.or(cfg.source_dev);
            cfg.target_test = test.or(cfg.target_test);
            cfg.rikd.iterations = 1;
            commands::distill(&cfg, None)
        }
        Command::Rikd { common, teacher, unlabeled, dev, test, resume_from } => {
            let mut cfg = resolve(&common)?;
            cfg.teacher = teacher.or(cfg.teacher);
            cfg.target_unlabeled = unlabeled.or(cfg.target_unlabeled);
            cfg.source_dev = dev.or(cfg.source_dev);
            cfg.target_test = test.or(cfg.target_test);
            commands::distill(&cfg, resume_from)
        }
        Command::Eval { common, model, test } => {
            let cfg = resolve(&common)?;
            commands::eval(&cfg, &model, &test)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
