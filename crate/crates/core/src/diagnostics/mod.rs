//! Dimensional-collapse measurements: RankMe, singular-value spectra of
//! embeddings and gradient snapshots, and AUC.

mod auc;
mod report;

pub use auc::auc;
pub use report::{write_spectrum_csv, write_timeline_csv};

use crate::error::{Error, Result};
use crate::linalg::{covariance, svd, Matrix};
use crate::scalar::Scalar;

/// Entropy-based effective rank of a matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankMeScore {
    pub value: f64,
    /// Number of singular values entering the estimate, `min(N, K)`.
    pub n_singular: usize,
}

/// `exp(−Σ p_k ln p_k)` with `p_k = σ_k / ‖σ‖₁`; zero `p_k` contribute 0.
pub fn rankme_from_sigma<T: Scalar>(sigma: &[T]) -> Result<RankMeScore> {
    let total: f64 = sigma.iter().map(|s| s.as_f64()).sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::Degenerate("RankMe is undefined for an all-zero spectrum".into()));
    }
    let entropy: f64 = sigma
        .iter()
        .map(|s| s.as_f64() / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    let n = sigma.len();
    Ok(RankMeScore { value: entropy.exp().clamp(1.0, n as f64), n_singular: n })
}

/// RankMe of `z` itself (not of its covariance).
pub fn rankme<T: Scalar>(z: &Matrix<T>) -> Result<RankMeScore> {
    rankme_from_sigma(&svd(z)?.sigma)
}

/// A descending singular-value series with its normalized forms.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub sigma: Vec<f64>,
    /// `σ_k / σ_1` (all zero if `σ_1 = 0`).
    pub normalized: Vec<f64>,
    /// `log10` of `normalized`, floored at [`LOG10_FLOOR`].
    pub log10_normalized: Vec<f64>,
}

pub const LOG10_FLOOR: f64 = -16.0;

impl SpectrumReport {
    pub fn from_sigma<T: Scalar>(sigma: &[T]) -> Self {
        let sigma: Vec<f64> = sigma.iter().map(|s| s.as_f64()).collect();
        let top = sigma.first().copied().unwrap_or(0.0);
        let normalized: Vec<f64> =
            sigma.iter().map(|&s| if top > 0.0 { s / top } else { 0.0 }).collect();
        let log10_normalized = normalized
            .iter()
            .map(|&x| if x > 0.0 { x.log10().max(LOG10_FLOOR) } else { LOG10_FLOOR })
            .collect();
        Self { sigma, normalized, log10_normalized }
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }
}

/// Spectrum of the covariance `C` of the rows of `z` (mean-centred, `1/B`).
pub fn embedding_spectrum<T: Scalar>(z: &Matrix<T>) -> Result<SpectrumReport> {
    Ok(SpectrumReport::from_sigma(&svd(&covariance(z)?)?.sigma))
}

/// Singular values of `z` itself; these are the values RankMe consumes.
pub fn raw_spectrum<T: Scalar>(z: &Matrix<T>) -> Result<SpectrumReport> {
    Ok(SpectrumReport::from_sigma(&svd(z)?.sigma))
}

/// How per-sample embedding gradients are arranged into a snapshot matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SnapshotLayout {
    /// One row per sample, `F·k` columns.
    #[default]
    Concatenated,
    /// One row per (sample, field), `k` columns.
    PerField,
}

impl std::str::FromStr for SnapshotLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concatenated" => Ok(SnapshotLayout::Concatenated),
            "per_field" => Ok(SnapshotLayout::PerField),
            _ => Err(Error::Config(format!("unknown snapshot layout {s:?} (concatenated|per_field)"))),
        }
    }
}

impl std::fmt::Display for SnapshotLayout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SnapshotLayout::Concatenated => "concatenated",
            SnapshotLayout::PerField => "per_field",
        })
    }
}

/// Embedding gradients collected at one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSnapshot<T> {
    pub step: u64,
    pub matrix: Matrix<T>,
}

/// RankMe per snapshot, in order. All-zero snapshots are skipped.
pub fn grad_rank_timeline<T: Scalar>(snapshots: &[GradSnapshot<T>]) -> Result<Vec<(u64, RankMeScore)>> {
    if snapshots.is_empty() {
        return Err(Error::Arity("gradient timeline needs at least one snapshot".into()));
    }
    if let Some(w) = snapshots.windows(2).find(|w| w[1].step <= w[0].step) {
        return Err(Error::Arity(format!(
            "snapshot steps must increase, got {} after {}",
            w[1].step, w[0].step
        )));
    }
    let mut out = Vec::with_capacity(snapshots.len());
    for snap in snapshots {
        match rankme(&snap.matrix) {
            Ok(score) => out.push((snap.step, score)),
            Err(Error::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
