//! Experiment driver behind the `collapse-lab` binary.

mod config;
mod gradcheck;
mod train;

pub use config::{parse_pairs, DataSource, ExperimentConfig, Preset, KEYS};
pub use gradcheck::{
    check_instance, check_oracles, check_variants, cmd_gradcheck, gradcheck_with, into_result, BackwardFn,
    GradcheckReport, VariantCheck, KINK_MARGIN, ORACLE_TOLERANCE,
};
pub use train::{
    cmd_spectrum, cmd_synth, cmd_train, collect_embeddings, load_dataset, split_dataset, train, EpochMetrics,
    RunReport, SpectrumSummary, Trained,
};

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "collapse-lab", version, about = "Train CTR interaction models and measure dimensional collapse")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file of `key = value` lines
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the `out` key)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for every random stream (overrides the `seed` key)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Defaults to start from: desk or avazu-like
    #[arg(long, global = true, default_value = "desk")]
    pub preset: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write metrics, checkpoint, spectra and gradient timeline
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Check backward against finite differences and the closed forms
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Embedding spectra and RankMe of a checkpoint (or a fresh init)
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write the configured synthetic dataset as CSV
    Synth {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let preset: Preset = common.preset.parse()?;
    match &common.config {
        Some(path) => ExperimentConfig::load(path, preset, common.seed),
        None => ExperimentConfig::resolve(preset, None, common.seed),
    }
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> Result<PathBuf> {
    common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::Config("an output directory is required (--out or the `out` key)".into()))
}

/// Runs one subcommand, printing progress to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            let cfg = resolve(&common)?;
            let out = out_dir(&common, &cfg)?;
            let report = cmd_train(&cfg, &out)?;
            for e in &report.epochs {
                let auc = e.auc.map_or("n/a".to_string(), |a| format!("{a:.4}"));
                println!(
                    "epoch {:>3}  loss {:.5}  val_loss {:.5}  auc {auc}  rankme {:.3}",
                    e.epoch, e.loss, e.val_loss, e.rankme
                );
            }
            println!("wrote {}", display(&out));
            Ok(())
        }
        Command::Gradcheck { common } => {
            let cfg = resolve(&common)?;
            let report = cmd_gradcheck(&cfg)?;
            for line in report.lines() {
                println!("{line}");
            }
            into_result(&report)
        }
        Command::Spectrum { common, checkpoint } => {
            let cfg = resolve(&common)?;
            let out = out_dir(&common, &cfg)?;
            let s = cmd_spectrum(&cfg, checkpoint.as_deref(), &out)?;
            println!("rankme {:.4} over {} samples x {} columns", s.rankme, s.samples, s.width);
            println!("wrote {}", display(&out));
            Ok(())
        }
        Command::Synth { common } => {
            let cfg = resolve(&common)?;
            let out = out_dir(&common, &cfg)?;
            println!("wrote {}", display(&cmd_synth(&cfg, &out)?));
            Ok(())
        }
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
