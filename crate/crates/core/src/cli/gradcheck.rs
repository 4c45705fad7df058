//! Backward-vs-finite-difference checks over every variant, and
//! closed-form-vs-backward checks on one-hidden-layer models.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::autograd::{all_coords, backward, compare_with_finite_diff, GradBundle, Mismatch, Tolerance};
use crate::closedform::{OracleKind, OracleReport};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{model_forward, Backbone, ForwardTrace, Head, ModelParams, ModelSpec};

/// Closed forms must agree with backward to this relative error.
pub const ORACLE_TOLERANCE: f64 = 1e-10;
/// Hidden pre-activations closer than this to zero are redrawn.
pub const KINK_MARGIN: f64 = 1e-6;

pub type BackwardFn<'a> = &'a dyn Fn(&ModelParams<f64>, &ForwardTrace<f64>, &[u8]) -> Result<GradBundle<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct VariantCheck {
    pub variant: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub failures: Vec<Mismatch>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub variants: Vec<VariantCheck>,
    pub oracles: Vec<OracleReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.variants.iter().all(|v| v.failures.is_empty())
            && self.oracles.iter().all(|o| o.max_rel_error <= ORACLE_TOLERANCE)
    }

    pub fn lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for v in &self.variants {
            lines.push(format!(
                "{:<6} {:<22} checked {:>4}  skipped {:>3}  max rel err {:.3e}",
                if v.failures.is_empty() { "ok" } else { "FAIL" },
                v.variant,
                v.checked,
                v.skipped,
                v.max_rel_error
            ));
        }
        for o in &self.oracles {
            lines.push(format!(
                "{:<6} closed form {:<10} instances {:>4}  max rel err {:.3e}",
                if o.max_rel_error <= ORACLE_TOLERANCE { "ok" } else { "FAIL" },
                o.kind.name(),
                o.instances,
                o.max_rel_error
            ));
        }
        lines
    }

    /// Offending coordinates, one per line.
    pub fn failure_summary(&self) -> String {
        let mut s = Vec::new();
        for v in &self.variants {
            for m in &v.failures {
                s.push(format!(
                    "{} {}[{}]: backward {:e} vs finite difference {:e}",
                    v.variant, m.tensor, m.offset, m.analytic, m.numeric
                ));
            }
        }
        for o in self.oracles.iter().filter(|o| o.max_rel_error > ORACLE_TOLERANCE) {
            s.push(format!("closed form {}: max rel err {:e}", o.kind.name(), o.max_rel_error));
        }
        s.join("\n")
    }
}

/// Small random model and batch for one variant. Parameters are scaled up
/// from the training initializer so every term contributes measurably.
pub fn check_instance(backbone: Backbone, head: Head, seed: u64) -> Result<(ModelSpec, ModelParams<f64>, Batch)> {
    let spec = ModelSpec {
        embedding_dim: 4,
        hidden: vec![6, 5],
        cross_depth: 2,
        init_std: 0.5,
        seed,
        ..ModelSpec::new(backbone, head)
    };
    let fields = 4;
    let vocab = vec![8; fields];
    let params = ModelParams::<f64>::init(&spec, &vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let rows = 8;
    let labels = (0..rows).map(|_| rng.random_range(0..=1u8)).collect();
    let indices = (0..rows * fields).map(|_| rng.random_range(0..8u32)).collect();
    Ok((spec, params, Batch::new(labels, indices, fields)?))
}

/// Runs the finite-difference suite with a caller-supplied backward pass.
pub fn check_variants(cfg: &ExperimentConfig, backward_fn: BackwardFn<'_>) -> Result<Vec<VariantCheck>> {
    let tol = Tolerance::default();
    let mut out = Vec::new();
    for (n, (b, h)) in ModelSpec::variants().enumerate() {
        let seed = cfg.stream_seed(&format!("gradcheck/{n}"));
        let (spec, params, batch) = check_instance(b, h, seed)?;
        let trace = model_forward(&spec, &params, &batch)?;
        let analytic = backward_fn(&params, &trace, batch.labels())?;
        let mut coords = all_coords(&params);
        coords.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut check = VariantCheck {
            variant: spec.name(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            failures: Vec::new(),
        };
        // keep drawing until enough coordinates survive the kink filter
        for chunk in coords.chunks(cfg.gradcheck_coords) {
            if check.checked >= cfg.gradcheck_coords {
                break;
            }
            let r = compare_with_finite_diff(&spec, &params, &batch, &analytic, chunk, cfg.gradcheck_h, tol)?;
            check.checked += r.checked;
            check.skipped += r.skipped;
            check.max_rel_error = check.max_rel_error.max(r.max_rel_error);
            check.failures.extend(r.failures);
        }
        out.push(check);
    }
    Ok(out)
}

pub fn check_oracles(cfg: &ExperimentConfig) -> Result<Vec<OracleReport>> {
    OracleKind::ALL
        .iter()
        .map(|&k| {
            let seed = cfg.stream_seed(&format!("oracle/{}", k.name()));
            OracleReport::run(k, cfg.gradcheck_instances, seed, KINK_MARGIN)
        })
        .collect()
}

/// Full gradient check with the model's own backward pass.
pub fn cmd_gradcheck(cfg: &ExperimentConfig) -> Result<GradcheckReport> {
    gradcheck_with(cfg, &|p, t, y| backward(p, t, y))
}

pub fn gradcheck_with(cfg: &ExperimentConfig, backward_fn: BackwardFn<'_>) -> Result<GradcheckReport> {
    Ok(GradcheckReport { variants: check_variants(cfg, backward_fn)?, oracles: check_oracles(cfg)? })
}

/// `Ok` when every check passed, otherwise a tolerance error listing the
/// offending coordinates.
pub fn into_result(report: &GradcheckReport) -> Result<()> {
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Tolerance(report.failure_summary()))
    }
}
