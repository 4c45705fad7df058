//! Analytic-vs-numeric gradient comparison.

use crate::autograd::{finite_diff_at, Coord, GradBundle};
use crate::data::Batch;
use crate::error::Result;
use crate::model::{ModelParams, ModelSpec};
use crate::scalar::Scalar;

/// Acceptance rule per coordinate: relative error `≤ rel` when
/// `|numeric| ≥ abs_floor`, otherwise absolute error `≤ abs_floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    pub abs_floor: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { rel: 1e-4, abs_floor: 1e-6 }
    }
}

impl Tolerance {
    /// Returns `(relative error if measured, pass)`.
    pub fn judge(&self, analytic: f64, numeric: f64) -> (Option<f64>, bool) {
        if numeric.abs() < self.abs_floor {
            (None, (analytic - numeric).abs() <= self.abs_floor)
        } else {
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            (Some(rel), rel <= self.rel)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub tensor: String,
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub checked: usize,
    /// Coordinates excluded because the perturbation crossed a ReLU kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub failures: Vec<Mismatch>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares `analytic` against central differences at `coords`.
pub fn compare_with_finite_diff<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    batch: &Batch,
    analytic: &GradBundle<T>,
    coords: &[Coord],
    h: T,
    tol: Tolerance,
) -> Result<CheckReport> {
    let numeric = finite_diff_at(spec, params, batch, h, coords)?;
    let names = params.tensor_names();
    let mut report = CheckReport {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        failures: Vec::new(),
    };
    for (c, fd) in coords.iter().zip(numeric) {
        let Some(fd) = fd else {
            report.skipped += 1;
            continue;
        };
        report.checked += 1;
        let a = analytic.params.get(c.tensor, c.offset).as_f64();
        let n = fd.as_f64();
        let (rel, ok) = tol.judge(a, n);
        report.max_abs_error = report.max_abs_error.max((a - n).abs());
        if let Some(rel) = rel {
            report.max_rel_error = report.max_rel_error.max(rel);
        }
        if !ok {
            report.failures.push(Mismatch {
                tensor: names[c.tensor].clone(),
                offset: c.offset,
                analytic: a,
                numeric: n,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn judge_switches_to_absolute_near_zero() {
        let t = Tolerance::default();
        assert_eq!(t.judge(5e-7, 1e-7), (None, true));
        assert_eq!(t.judge(5e-6, 1e-7), (None, false));
        let (rel, ok) = t.judge(1.0001, 1.0);
        assert!(ok && rel.unwrap() < 1.0001e-4);
        assert!(!t.judge(1.01, 1.0).1);
    }
}
