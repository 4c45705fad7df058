//! Random instances comparing the closed forms with reverse-mode gradients
//! of the same logit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{fm_grad, pdnn_grad, sdnn_grad, OneHiddenConfig};
use crate::autograd::logit_backward;
use crate::data::Batch;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::model::{model_forward, Backbone, Head, ModelParams, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Fm,
    PDnn,
    SDnn,
}

impl OracleKind {
    pub const ALL: [OracleKind; 3] = [OracleKind::Fm, OracleKind::PDnn, OracleKind::SDnn];

    fn head(self) -> Head {
        match self {
            OracleKind::Fm => Head::None,
            OracleKind::PDnn => Head::PDnn,
            OracleKind::SDnn => Head::SDnn,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OracleKind::Fm => "fm",
            OracleKind::PDnn => "fm+p_dnn",
            OracleKind::SDnn => "fm+s_dnn",
        }
    }
}

/// A single sample's field embeddings plus, for the DNN kinds, a
/// one-hidden-layer ReLU network and its output bias.
#[derive(Debug, Clone)]
pub struct Instance {
    pub kind: OracleKind,
    pub embeddings: Vec<Vec<f64>>,
    pub cfg: Option<OneHiddenConfig<f64>>,
    pub out_bias: f64,
}

/// Draws an instance with `F ∈ 2..=6`, `k ∈ 2..=8`, `H ∈ 1..=16`. Draws whose
/// hidden pre-activations come within `kink_margin` of zero are rejected;
/// the second return value counts rejections.
pub fn random_instance(kind: OracleKind, rng: &mut impl Rng, kink_margin: f64) -> (Instance, usize) {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rejected = 0;
    loop {
        let f = rng.random_range(2..=6usize);
        let k = rng.random_range(2..=8usize);
        let h = rng.random_range(1..=16usize);
        let embeddings: Vec<Vec<f64>> =
            (0..f).map(|_| (0..k).map(|_| std.sample(rng)).collect()).collect();
        let width = match kind {
            OracleKind::Fm => {
                return (Instance { kind, embeddings, cfg: None, out_bias: 0.0 }, rejected);
            }
            OracleKind::PDnn => f * k,
            OracleKind::SDnn => k,
        };
        let scale = (width as f64).sqrt().recip();
        let w_in = Matrix::from_fn(h, width, |_, _| scale * std.sample(rng));
        let b = (0..h).map(|_| 0.5 * std.sample(rng)).collect();
        let w_out = (0..h).map(|_| std.sample(rng)).collect();
        let cfg = OneHiddenConfig::new(w_in, b, w_out, f, k).expect("shapes chain by construction");
        let inst = Instance { kind, embeddings, cfg: Some(cfg), out_bias: std.sample(rng) };
        let margin = inst.hidden_margin();
        if margin >= kink_margin {
            return (inst, rejected);
        }
        rejected += 1;
    }
}

impl Instance {
    pub fn fields(&self) -> usize {
        self.embeddings.len()
    }

    fn views(&self) -> Vec<&[f64]> {
        self.embeddings.iter().map(Vec::as_slice).collect()
    }

    fn network_input(&self) -> Vec<f64> {
        match self.kind {
            OracleKind::SDnn => super::bi_interaction(&self.views()),
            _ => self.embeddings.concat(),
        }
    }

    /// Smallest `|W_in x + b|` over hidden units (∞ for FM).
    pub fn hidden_margin(&self) -> f64 {
        match &self.cfg {
            None => f64::INFINITY,
            Some(cfg) => cfg
                .pre_activation(&self.network_input())
                .expect("shapes chain")
                .iter()
                .fold(f64::INFINITY, |m, z| m.min(z.abs())),
        }
    }

    pub fn closed_form(&self, i: usize) -> Result<Vec<f64>> {
        let e = self.views();
        match (&self.kind, &self.cfg) {
            (OracleKind::Fm, _) => fm_grad(&e, i),
            (OracleKind::PDnn, Some(cfg)) => pdnn_grad(&e, i, cfg),
            (OracleKind::SDnn, Some(cfg)) => sdnn_grad(&e, i, cfg),
            _ => unreachable!("DNN instances always carry a config"),
        }
    }

    /// `∂Φ/∂v_i` for every field, from the model's backward pass.
    pub fn autograd(&self) -> Result<Vec<Vec<f64>>> {
        let f = self.fields();
        let k = self.embeddings[0].len();
        let hidden = self.cfg.as_ref().map_or(Vec::new(), |c| vec![c.hidden()]);
        let spec = ModelSpec {
            embedding_dim: k,
            hidden,
            ..ModelSpec::new(Backbone::Fm, self.kind.head())
        };
        let mut params = ModelParams::<f64>::zeros(&spec, &vec![1; f])?;
        for (table, v) in params.embeddings_mut().iter_mut().zip(&self.embeddings) {
            table.row_mut(0).copy_from_slice(v);
        }
        if let (Some(cfg), Some(mlp)) = (&self.cfg, params.mlp_mut()) {
            mlp.layers[0].weight = cfg.w_in.clone();
            mlp.layers[0].bias = cfg.b.clone();
            mlp.out_weight = cfg.w_out.clone();
            mlp.out_bias = self.out_bias;
        }
        let batch = Batch::new(vec![0], vec![0; f], f)?;
        let trace = model_forward(&spec, &params, &batch)?;
        let grads = logit_backward(&params, &trace)?;
        Ok((0..f).map(|i| grads.embedding_grad(0, i).to_vec()).collect())
    }

    /// Largest norm-wise relative error `‖a − c‖∞ / max(‖a‖∞, ‖c‖∞)` over
    /// fields (0 when both vectors vanish).
    pub fn max_rel_error(&self) -> Result<f64> {
        let auto = self.autograd()?;
        let mut worst = 0.0f64;
        for (i, a) in auto.iter().enumerate() {
            let c = self.closed_form(i)?;
            worst = worst.max(rel_error(a, &c));
        }
        Ok(worst)
    }
}

fn rel_error(a: &[f64], c: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = inf(a).max(inf(c));
    if scale == 0.0 {
        return 0.0;
    }
    a.iter().zip(c).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub kind: OracleKind,
    pub instances: usize,
    pub rejected: usize,
    pub max_rel_error: f64,
}

impl OracleReport {
    /// Runs `instances` random comparisons for `kind`.
    pub fn run(kind: OracleKind, instances: usize, seed: u64, kink_margin: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut report = Self { kind, instances, rejected: 0, max_rel_error: 0.0 };
        for _ in 0..instances {
            let (inst, rejected) = random_instance(kind, &mut rng, kink_margin);
            report.rejected += rejected;
            report.max_rel_error = report.max_rel_error.max(inst.max_rel_error()?);
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms_match_backward() {
        for kind in OracleKind::ALL {
            let r = OracleReport::run(kind, 40, 11, 1e-6).unwrap();
            assert!(r.max_rel_error <= 1e-10, "{}: {}", kind.name(), r.max_rel_error);
        }
    }

    #[test]
    fn rel_error_zero_vectors() {
        assert_eq!(rel_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(rel_error(&[1.0, 0.0], &[0.0, 0.0]), 1.0);
    }
}
