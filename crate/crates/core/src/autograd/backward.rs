use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{BackboneTrace, ForwardTrace, MlpParams, MlpTrace, ModelParams, SampleTrace};
use crate::scalar::Scalar;

/// Gradients for every parameter tensor plus the per-sample embedding
/// gradients `∂/∂v_i`.
#[derive(Debug)]
pub struct GradBundle<T> {
    /// Same layout as the model parameters, holding gradients.
    pub params: ModelParams<T>,
    /// `batch × (F·k)`: row `s` is the concatenation of the gradients with
    /// respect to each field embedding looked up by sample `s`.
    pub sample_embedding_grads: Matrix<T>,
}

impl<T: Scalar> Clone for GradBundle<T> {
    fn clone(&self) -> Self {
        Self { params: self.params.clone(), sample_embedding_grads: self.sample_embedding_grads.clone() }
    }
}

impl<T: Scalar> GradBundle<T> {
    /// Per-field layout `(batch·F) × k` of the sample embedding gradients.
    pub fn per_field_embedding_grads(&self) -> Matrix<T> {
        let (b, d) = self.sample_embedding_grads.shape();
        let k = self.params.embedding_dim();
        self.sample_embedding_grads.clone().reshape(b * d / k, k).expect("d is a multiple of k")
    }

    /// Gradient of field `field`'s embedding for sample `s`.
    pub fn embedding_grad(&self, s: usize, field: usize) -> &[T] {
        let k = self.params.embedding_dim();
        &self.sample_embedding_grads.row(s)[field * k..(field + 1) * k]
    }

    pub fn all_finite(&self) -> bool {
        self.params.all_finite() && self.sample_embedding_grads.as_slice().iter().all(|x| x.is_finite())
    }
}

/// `∂L/∂Φ = p − y` for the BCE loss of a sigmoid output.
#[inline]
pub fn loss_logit_grad<T: Scalar>(p: T, y: u8) -> T {
    p - if y == 1 { T::one() } else { T::zero() }
}

/// Gradients of the mean batch BCE.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    trace: &ForwardTrace<T>,
    labels: &[u8],
) -> Result<GradBundle<T>> {
    if labels.len() != trace.len() {
        return Err(Error::Dimension(format!(
            "{} labels for {} traced samples",
            labels.len(),
            trace.len()
        )));
    }
    let inv_b = T::one() / T::lit(trace.len() as f64);
    let seeds: Vec<T> = trace
        .samples
        .iter()
        .zip(labels)
        .map(|(s, &y)| loss_logit_grad(s.prob, y) * inv_b)
        .collect();
    backward_seeded(params, trace, &seeds)
}

/// Gradients of `Σ_s Φ_s`, the summed logits (no loss).
pub fn logit_backward<T: Scalar>(params: &ModelParams<T>, trace: &ForwardTrace<T>) -> Result<GradBundle<T>> {
    backward_seeded(params, trace, &vec![T::one(); trace.len()])
}

/// Reverse pass with an upstream `∂/∂Φ_s` per sample.
pub fn backward_seeded<T: Scalar>(
    params: &ModelParams<T>,
    trace: &ForwardTrace<T>,
    seeds: &[T],
) -> Result<GradBundle<T>> {
    if trace.stamp != params.stamp() {
        return Err(Error::Stale("trace was recorded against different parameter values".into()));
    }
    if seeds.len() != trace.len() {
        return Err(Error::Dimension(format!("{} seeds for {} samples", seeds.len(), trace.len())));
    }
    let k = trace.embedding_dim;
    let f = trace.num_fields;
    let mut grads = params.zeros_like();
    let mut sample_grads = Matrix::zeros(trace.len().max(1), f * k);

    for (s, (sample, &seed)) in trace.samples.iter().zip(seeds).enumerate() {
        let d_emb = sample_backward(params, &mut grads, sample, seed, k)?;
        let tables = grads.embeddings_mut();
        for (field, &ix) in trace.sample_indices(s).iter().enumerate() {
            let row = tables[field].row_mut(ix as usize);
            for (g, &d) in row.iter_mut().zip(&d_emb[field * k..(field + 1) * k]) {
                *g += d;
            }
        }
        sample_grads.row_mut(s).copy_from_slice(&d_emb);
    }
    Ok(GradBundle { params: grads, sample_embedding_grads: sample_grads })
}

/// Accumulates one sample's parameter gradients into `grads` and returns
/// `∂/∂(concatenated embeddings)`.
fn sample_backward<T: Scalar>(
    params: &ModelParams<T>,
    grads: &mut ModelParams<T>,
    sample: &SampleTrace<T>,
    seed: T,
    k: usize,
) -> Result<Vec<T>> {
    let width = sample.embeddings.len();
    let mut d_emb = vec![T::zero(); width];

    // Upstream into the backbone: a scalar for parallel/no head, a vector
    // for stacked heads.
    let mut d_interaction: Option<Vec<T>> = None;
    let backbone_seed = sample.backbone_logit.map(|_| seed);

    if let (Some(mlp), Some(mtrace)) = (params.mlp(), sample.mlp.as_ref()) {
        let gmlp = grads.mlp_mut().expect("same layout");
        let d_input = mlp_backward(mlp, gmlp, mtrace, seed);
        if sample.backbone_logit.is_some() {
            // parallel: the MLP reads the concatenated embeddings directly
            for (d, g) in d_emb.iter_mut().zip(&d_input) {
                *d += *g;
            }
        } else {
            d_interaction = Some(d_input);
        }
    }

    match &sample.backbone {
        BackboneTrace::Fm { field_sum, .. } => {
            // ∂Φ/∂v_i = Σ_{j≠i} v_j (scalar FM); bi-interaction scales each
            // coordinate by the upstream vector instead.
            for (field, chunk) in d_emb.chunks_mut(k).enumerate() {
                let v = &sample.embeddings[field * k..(field + 1) * k];
                for m in 0..k {
                    let others = field_sum[m] - v[m];
                    let up = match (&d_interaction, backbone_seed) {
                        (Some(g), _) => g[m],
                        (None, Some(b)) => b,
                        (None, None) => T::zero(),
                    };
                    chunk[m] += up * others;
                }
            }
        }
        BackboneTrace::Cross { states, gates } => {
            let depth = gates.len();
            let x0 = &states[0];
            let mut g: Vec<T> = match (&d_interaction, backbone_seed) {
                (Some(g), _) => g.clone(),
                (None, Some(b)) => {
                    let readout = params.readout().expect("parallel crossnet has a readout");
                    let gr = grads.readout_mut().expect("same layout");
                    for (gw, &x) in gr.weight.iter_mut().zip(&states[depth]) {
                        *gw += b * x;
                    }
                    gr.bias += b;
                    readout.weight.iter().map(|&w| b * w).collect()
                }
                (None, None) => vec![T::zero(); width],
            };
            let cross = params.cross().expect("crossnet params");
            let gcross = grads.cross_mut().expect("same layout");
            let mut d_x0 = vec![T::zero(); width];
            for l in (0..depth).rev() {
                // x_{l+1} = x0 ⊙ u + x_l,  u = W x_l + b
                let du: Vec<T> = g.iter().zip(x0).map(|(&gi, &a)| gi * a).collect();
                for ((dx, &gi), &u) in d_x0.iter_mut().zip(&g).zip(&gates[l]) {
                    *dx += gi * u;
                }
                let glayer = &mut gcross.layers[l];
                let xl = &states[l];
                for (i, &dui) in du.iter().enumerate() {
                    if dui == T::zero() {
                        continue;
                    }
                    glayer.bias[i] += dui;
                    for (gw, &x) in glayer.weight.row_mut(i).iter_mut().zip(xl) {
                        *gw += dui * x;
                    }
                }
                let back = cross.layers[l].weight.mat_t_vec(&du)?;
                for (gi, b) in g.iter_mut().zip(back) {
                    *gi += b;
                }
            }
            for ((d, &gi), &dx) in d_emb.iter_mut().zip(&g).zip(&d_x0) {
                *d += gi + dx;
            }
        }
    }
    Ok(d_emb)
}

/// Backpropagates `seed = ∂/∂(MLP output)`; returns `∂/∂(MLP input)`.
fn mlp_backward<T: Scalar>(
    params: &MlpParams<T>,
    grads: &mut MlpParams<T>,
    trace: &MlpTrace<T>,
    seed: T,
) -> Vec<T> {
    let depth = params.layers.len();
    let last = &trace.inputs[depth];
    for (gw, &a) in grads.out_weight.iter_mut().zip(last) {
        *gw += seed * a;
    }
    grads.out_bias += seed;
    let mut d_a: Vec<T> = params.out_weight.iter().map(|&w| seed * w).collect();
    for l in (0..depth).rev() {
        let dz: Vec<T> = d_a
            .iter()
            .zip(&trace.pre[l])
            .map(|(&d, &z)| d * params.activation.derivative(z))
            .collect();
        let input = &trace.inputs[l];
        let glayer = &mut grads.layers[l];
        for (i, &dzi) in dz.iter().enumerate() {
            if dzi == T::zero() {
                continue;
            }
            glayer.bias[i] += dzi;
            for (gw, &a) in glayer.weight.row_mut(i).iter_mut().zip(input) {
                *gw += dzi * a;
            }
        }
        d_a = params.layers[l].weight.mat_t_vec(&dz).expect("shapes checked in forward");
    }
    d_a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Batch;
    use crate::model::{model_forward, Backbone, Head, ModelSpec};

    fn setup(backbone: Backbone, head: Head) -> (ModelSpec, ModelParams<f64>, Batch) {
        let spec = ModelSpec {
            embedding_dim: 3,
            hidden: vec![4],
            cross_depth: 2,
            init_std: 0.5,
            seed: 3,
            ..ModelSpec::new(backbone, head)
        };
        let params = ModelParams::init(&spec, &[3, 4, 2]).unwrap();
        let batch = Batch::new(vec![1, 0, 1], vec![1, 2, 1, 2, 3, 0, 1, 1, 1], 3).unwrap();
        (spec, params, batch)
    }

    #[test]
    fn stale_trace_is_rejected() {
        let (spec, mut params, batch) = setup(Backbone::Fm, Head::PDnn);
        let trace = model_forward(&spec, &params, &batch).unwrap();
        params.tensors_mut();
        assert!(matches!(backward(&params, &trace, batch.labels()), Err(Error::Stale(_))));
        let other = params.clone();
        let trace = model_forward(&spec, &params, &batch).unwrap();
        assert!(matches!(backward(&other, &trace, batch.labels()), Err(Error::Stale(_))));
    }

    #[test]
    fn label_count_must_match() {
        let (spec, params, batch) = setup(Backbone::Fm, Head::None);
        let trace = model_forward(&spec, &params, &batch).unwrap();
        assert!(matches!(backward(&params, &trace, &[1]), Err(Error::Dimension(_))));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn single_sample_fm_embedding_grad() {
        let (spec, params, _) = setup(Backbone::Fm, Head::None);
        let batch = Batch::new(vec![1], vec![2, 3, 1], 3).unwrap();
        let trace = model_forward(&spec, &params, &batch).unwrap();
        let g = backward(&params, &trace, &[1]).unwrap();
        let residual = trace.samples[0].prob - 1.0;
        let rows: Vec<&[f64]> =
            (0..3).map(|f| params.embeddings()[f].row(batch.sample(0)[f] as usize)).collect();
        for i in 0..3 {
            for m in 0..3 {
                let others: f64 = (0..3).filter(|&j| j != i).map(|j| rows[j][m]).sum();
                assert!((g.embedding_grad(0, i)[m] - residual * others).abs() < 1e-15);
            }
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn repeated_indices_accumulate() {
        let (spec, params, _) = setup(Backbone::Fm, Head::PDnn);
        let batch = Batch::new(vec![1, 0], vec![1, 1, 1, 1, 2, 1], 3).unwrap();
        let trace = model_forward(&spec, &params, &batch).unwrap();
        let g = backward(&params, &trace, batch.labels()).unwrap();
        let table0 = g.params.embeddings()[0].row(1);
        for m in 0..3 {
            let sum = g.embedding_grad(0, 0)[m] + g.embedding_grad(1, 0)[m];
            assert!((table0[m] - sum).abs() < 1e-16);
        }
    }

    #[test]
    fn saturated_predictions_have_vanishing_grads() {
        let (spec, mut params, batch) = setup(Backbone::Fm, Head::PDnn);
        params.mlp_mut().unwrap().out_bias = 60.0;
        let labels = vec![1; batch.len()];
        let trace = model_forward(&spec, &params, &batch).unwrap();
        let g = backward(&params, &trace, &labels).unwrap();
        for t in g.params.tensors() {
            assert!(t.data.iter().all(|x| x.abs() <= 1e-8));
        }
    }

    #[test]
    fn per_field_layout_is_a_reshape() {
        let (spec, params, batch) = setup(Backbone::CrossNet, Head::SDnn);
        let trace = model_forward(&spec, &params, &batch).unwrap();
        let g = backward(&params, &trace, batch.labels()).unwrap();
        let pf = g.per_field_embedding_grads();
        assert_eq!(pf.shape(), (9, 3));
        assert_eq!(pf.row(4), g.embedding_grad(1, 1));
    }
}
