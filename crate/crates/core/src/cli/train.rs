//! Training loop, run directory layout and the spectrum command.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{DataSource, ExperimentConfig};
use crate::autograd::{backward, OptimState};
use crate::data::{batch_iter, gen_synthetic, load_csv, sample_rows, Batch, Dataset};
use crate::diagnostics::{
    auc, embedding_spectrum, grad_rank_timeline, rankme, raw_spectrum, write_spectrum_csv,
    write_timeline_csv, GradSnapshot, RankMeScore, SnapshotLayout, SpectrumReport,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{mean_loss, model_forward, save_checkpoint, ModelParams, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean of the minibatch losses seen during the epoch.
    pub loss: f64,
    pub val_loss: f64,
    /// `None` when the validation split holds a single class.
    pub auc: Option<f64>,
    /// RankMe of the concatenated embeddings of the spectrum sample.
    pub rankme: f64,
}

/// In-memory result of a training run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub spec: ModelSpec,
    pub params: ModelParams<f64>,
    pub initial_loss: f64,
    pub epochs: Vec<EpochMetrics>,
    pub steps: usize,
    pub timelines: Vec<(SnapshotLayout, Vec<(u64, RankMeScore)>)>,
}

impl Trained {
    pub fn final_rankme(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.rankme)
    }

    /// Last point of the timeline for `layout`.
    pub fn final_grad_rankme(&self, layout: SnapshotLayout) -> Option<f64> {
        self.timelines
            .iter()
            .find(|(l, _)| *l == layout)
            .and_then(|(_, t)| t.last())
            .map(|(_, s)| s.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub variant: String,
    pub seed: u64,
    pub initial_loss: f64,
    pub epochs: Vec<EpochMetrics>,
    pub steps: usize,
    pub final_rankme: f64,
    pub final_grad_rankme: Option<f64>,
    pub config: PathBuf,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub spectrum_covariance: PathBuf,
    pub spectrum_raw: PathBuf,
    pub grad_timelines: Vec<PathBuf>,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Csv { path, label_column, hash_buckets } => load_csv(path, label_column, *hash_buckets),
        DataSource::Synthetic(spec) => gen_synthetic(spec),
    }
}

/// Train/validation split of the configured dataset.
pub fn split_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let ds = load_dataset(cfg)?;
    Ok(ds.split(cfg.stream_seed("split")))
}

/// `Z`: one row per sampled validation sample, the concatenation of its
/// field embeddings. Rows are drawn deterministically from the seed.
pub fn collect_embeddings(cfg: &ExperimentConfig, params: &ModelParams<f64>, ds: &Dataset) -> Result<Matrix<f64>> {
    let rows = sample_rows(ds.len(), cfg.spectrum_samples, cfg.stream_seed("spectrum"));
    if rows.is_empty() {
        return Err(Error::Degenerate("no samples available for the embedding spectrum".into()));
    }
    let k = params.embedding_dim();
    let width = params.num_fields() * k;
    let mut z = Matrix::zeros(rows.len(), width);
    for (r, &row) in rows.iter().enumerate() {
        let out = z.row_mut(r);
        for (f, (&ix, table)) in ds.sample(row).iter().zip(params.embeddings()).enumerate() {
            out[f * k..(f + 1) * k].copy_from_slice(table.row(ix as usize));
        }
    }
    Ok(z)
}

fn evaluate(spec: &ModelSpec, params: &ModelParams<f64>, ds: &Dataset, batch_size: usize) -> Result<(f64, Option<f64>)> {
    let mut loss = 0.0;
    let mut scores = Vec::with_capacity(ds.len());
    let rows: Vec<usize> = (0..ds.len()).collect();
    for chunk in rows.chunks(batch_size) {
        let batch = Batch::from_rows(ds, chunk)?;
        let trace = model_forward(spec, params, &batch)?;
        loss += mean_loss(&trace, batch.labels())? * chunk.len() as f64;
        scores.extend(trace.probs());
    }
    let auc = match auc(ds.labels(), &scores) {
        Ok(a) => Some(a),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok((loss / ds.len() as f64, auc))
}

fn snapshot_matrix(grads: &crate::autograd::GradBundle<f64>, layout: SnapshotLayout) -> Matrix<f64> {
    match layout {
        SnapshotLayout::Concatenated => grads.sample_embedding_grads.clone(),
        SnapshotLayout::PerField => grads.per_field_embedding_grads(),
    }
}

/// Trains the configured model without touching the filesystem (except to
/// read a CSV source). `on_epoch` sees each epoch's metrics as they land.
pub fn train(cfg: &ExperimentConfig, mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>) -> Result<Trained> {
    let (train_ds, valid_ds) = split_dataset(cfg)?;
    if train_ds.is_empty() || valid_ds.is_empty() {
        return Err(Error::Config(format!(
            "dataset too small to split ({} train, {} validation rows)",
            train_ds.len(),
            valid_ds.len()
        )));
    }
    let spec = cfg.model.clone();
    spec.validate(train_ds.num_fields())?;
    let mut params = ModelParams::<f64>::init(&spec, &train_ds.vocab_sizes())?;
    let mut opt = OptimState::new(cfg.optim, cfg.lr);
    let (initial_loss, _) = evaluate(&spec, &params, &train_ds, cfg.batch_size)?;

    let mut snapshots: Vec<Vec<GradSnapshot<f64>>> = vec![Vec::new(); cfg.snapshot_layouts.len()];
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    let mut best_auc = f64::NEG_INFINITY;
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        let epoch_seed = cfg.stream_seed(&format!("batch/{epoch}"));
        let mut total = 0.0;
        for batch in batch_iter(&train_ds, cfg.batch_size, epoch_seed)? {
            let trace = model_forward(&spec, &params, &batch)?;
            let loss = mean_loss(&trace, batch.labels())?;
            if !loss.is_finite() {
                return Err(Error::Numeric { step, msg: format!("training loss is {loss}") });
            }
            let grads = backward(&params, &trace, batch.labels())?;
            if !grads.all_finite() {
                return Err(Error::Numeric { step, msg: "non-finite gradient".into() });
            }
            if cfg.snapshot_interval > 0 && step.is_multiple_of(cfg.snapshot_interval) {
                for (series, &layout) in snapshots.iter_mut().zip(&cfg.snapshot_layouts) {
                    series.push(GradSnapshot { step: step as u64, matrix: snapshot_matrix(&grads, layout) });
                }
            }
            opt.step(&mut params, &grads)?;
            total += loss * batch.len() as f64;
            step += 1;
        }
        let (val_loss, val_auc) = evaluate(&spec, &params, &valid_ds, cfg.batch_size)?;
        let z = collect_embeddings(cfg, &params, &valid_ds)?;
        let metrics = EpochMetrics {
            epoch,
            loss: total / train_ds.len() as f64,
            val_loss,
            auc: val_auc,
            rankme: rankme(&z)?.value,
        };
        on_epoch(&metrics)?;
        epochs.push(metrics);
        if cfg.patience > 0 {
            if val_auc.is_some_and(|a| a > best_auc) {
                best_auc = val_auc.unwrap_or(best_auc);
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
    }

    let mut timelines = Vec::new();
    for (series, &layout) in snapshots.iter().zip(&cfg.snapshot_layouts) {
        if !series.is_empty() {
            timelines.push((layout, grad_rank_timeline(series)?));
        }
    }
    Ok(Trained { spec, params, initial_loss, epochs, steps: step, timelines })
}

fn create_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn timeline_file(layout: SnapshotLayout) -> &'static str {
    match layout {
        SnapshotLayout::Concatenated => "grad_timeline.csv",
        SnapshotLayout::PerField => "grad_timeline_per_field.csv",
    }
}

/// Writes both spectra of `z` into `out`; returns the RankMe of `z`.
fn write_spectra(out: &Path, z: &Matrix<f64>) -> Result<(RankMeScore, SpectrumReport)> {
    let cov = embedding_spectrum(z)?;
    let raw = raw_spectrum(z)?;
    write_spectrum_csv(&out.join("spectrum_covariance.csv"), &cov)?;
    write_spectrum_csv(&out.join("spectrum_raw.csv"), &raw)?;
    Ok((crate::diagnostics::rankme_from_sigma(&raw.sigma)?, raw))
}

/// Trains and writes the run directory:
///
/// - `config.txt`: resolved config echo
/// - `metrics.jsonl`: one JSON object per epoch
/// - `checkpoint.txt`: final parameters
/// - `spectrum_covariance.csv`, `spectrum_raw.csv`: σ(C) and σ(Z)
/// - `grad_timeline.csv` (and/or `grad_timeline_per_field.csv`)
/// - `report.json`
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    create_out_dir(out)?;
    let config = out.join("config.txt");
    write_text(&config, &cfg.echo())?;
    let metrics = out.join("metrics.jsonl");
    let file = std::fs::File::create(&metrics).map_err(|e| Error::io(&metrics, e))?;
    let mut stream = std::io::BufWriter::new(file);
    let trained = train(cfg, |m| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        writeln!(stream, "{line}").and_then(|_| stream.flush()).map_err(|e| Error::io(&metrics, e))
    })?;
    drop(stream);

    let checkpoint = out.join("checkpoint.txt");
    save_checkpoint(&checkpoint, &trained.spec, &trained.params)?;
    let (_, valid) = split_dataset(cfg)?;
    let z = collect_embeddings(cfg, &trained.params, &valid)?;
    write_spectra(out, &z)?;

    let mut grad_timelines = Vec::new();
    for (layout, timeline) in &trained.timelines {
        let path = out.join(timeline_file(*layout));
        write_timeline_csv(&path, timeline)?;
        grad_timelines.push(path);
    }
    let report = RunReport {
        variant: trained.spec.name(),
        seed: cfg.seed,
        initial_loss: trained.initial_loss,
        epochs: trained.epochs.clone(),
        steps: trained.steps,
        final_rankme: trained.final_rankme(),
        final_grad_rankme: trained.final_grad_rankme(cfg.snapshot_layouts[0]),
        config,
        metrics,
        checkpoint,
        spectrum_covariance: out.join("spectrum_covariance.csv"),
        spectrum_raw: out.join("spectrum_raw.csv"),
        grad_timelines,
    };
    let report_path = out.join("report.json");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&report_path, &(json + "\n"))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumSummary {
    pub samples: usize,
    pub width: usize,
    pub rankme: f64,
    pub n_singular: usize,
}

/// Spectra and RankMe of the embeddings held by `checkpoint` (or of a fresh
/// initialization when `None`), over the seeded validation sample. Writes
/// `spectrum_covariance.csv`, `spectrum_raw.csv` and `rankme.json`.
pub fn cmd_spectrum(cfg: &ExperimentConfig, checkpoint: Option<&Path>, out: &Path) -> Result<SpectrumSummary> {
    let (train_ds, valid) = split_dataset(cfg)?;
    cfg.model.validate(train_ds.num_fields())?;
    let params = match checkpoint {
        Some(path) => {
            let p = crate::model::load_checkpoint::<f64>(path, &cfg.model)?;
            if p.vocab_sizes() != train_ds.vocab_sizes() {
                return Err(Error::Schema(format!(
                    "checkpoint vocabularies {:?} do not match the dataset {:?}",
                    p.vocab_sizes(),
                    train_ds.vocab_sizes()
                )));
            }
            p
        }
        None => ModelParams::init(&cfg.model, &train_ds.vocab_sizes())?,
    };
    let z = collect_embeddings(cfg, &params, &valid)?;
    create_out_dir(out)?;
    let (score, _) = write_spectra(out, &z)?;
    let summary = SpectrumSummary {
        samples: z.rows(),
        width: z.cols(),
        rankme: score.value,
        n_singular: score.n_singular,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_text(&out.join("rankme.json"), &(json + "\n"))?;
    Ok(summary)
}

/// Materializes the configured synthetic dataset as `out/data.csv`.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let DataSource::Synthetic(spec) = &cfg.data else {
        return Err(Error::Config("synth needs data.source = synthetic".into()));
    };
    create_out_dir(out)?;
    let path = out.join("data.csv");
    gen_synthetic(spec)?.write_csv(&path)?;
    Ok(path)
}
