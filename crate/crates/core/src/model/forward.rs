use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{Backbone, CrossParams, Head, MlpParams, ModelParams, ModelSpec};
use crate::scalar::{dot, sigmoid, Scalar};

/// FM logit `Σ_{i<j} ⟨v_i, v_j⟩`, summed pair by pair.
pub fn fm_logit<T: Scalar>(embeddings: &[&[T]]) -> Result<T> {
    check_arity(embeddings)?;
    let mut total = T::zero();
    for i in 0..embeddings.len() {
        for j in (i + 1)..embeddings.len() {
            total += dot(embeddings[i], embeddings[j]);
        }
    }
    Ok(total)
}

/// FM logit through the `O(F·k)` identity `½(‖Σ v_i‖² − Σ ‖v_i‖²)`.
pub fn fm_logit_squared_sum<T: Scalar>(embeddings: &[&[T]]) -> Result<T> {
    check_arity(embeddings)?;
    let sum = field_sum(embeddings);
    let sq: T = embeddings.iter().map(|v| dot(v, v)).sum();
    Ok((dot(&sum, &sum) - sq) * T::lit(0.5))
}

/// Bi-interaction pooling `Σ_{i<j} v_i ⊙ v_j`.
pub fn bi_interaction<T: Scalar>(embeddings: &[&[T]]) -> Result<Vec<T>> {
    check_arity(embeddings)?;
    let k = embeddings[0].len();
    let mut out = vec![T::zero(); k];
    for i in 0..embeddings.len() {
        for j in (i + 1)..embeddings.len() {
            for ((o, &a), &b) in out.iter_mut().zip(embeddings[i]).zip(embeddings[j]) {
                *o += a * b;
            }
        }
    }
    Ok(out)
}

fn check_arity<T>(embeddings: &[&[T]]) -> Result<()> {
    if embeddings.len() < 2 {
        return Err(Error::Arity(format!("need at least 2 fields, got {}", embeddings.len())));
    }
    let k = embeddings[0].len();
    if embeddings.iter().any(|v| v.len() != k) {
        return Err(Error::Dimension("embeddings differ in length".into()));
    }
    Ok(())
}

fn field_sum<T: Scalar>(embeddings: &[&[T]]) -> Vec<T> {
    let mut sum = vec![T::zero(); embeddings[0].len()];
    for v in embeddings {
        for (s, &x) in sum.iter_mut().zip(*v) {
            *s += x;
        }
    }
    sum
}

/// Applies every cross layer to `x0` and returns the final state.
pub fn cross_forward<T: Scalar>(x0: &[T], params: &CrossParams<T>) -> Result<Vec<T>> {
    params.check_width(x0.len())?;
    let (states, _) = cross_trace(x0, params);
    Ok(states.into_iter().last().expect("x0 is always present"))
}

fn cross_trace<T: Scalar>(x0: &[T], params: &CrossParams<T>) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
    let mut states = vec![x0.to_vec()];
    let mut gates = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let x = states.last().expect("nonempty");
        let mut gate = layer.weight.mat_vec(x).expect("width checked");
        for (g, &b) in gate.iter_mut().zip(&layer.bias) {
            *g += b;
        }
        let next = x0.iter().zip(&gate).zip(x).map(|((&a, &g), &xl)| a * g + xl).collect();
        gates.push(gate);
        states.push(next);
    }
    (states, gates)
}

/// MLP head output `w_out · f(... f(W_1 x + b_1) ...) + b_out`.
pub fn mlp_forward<T: Scalar>(x: &[T], params: &MlpParams<T>) -> Result<T> {
    params.check_shapes()?;
    if x.len() != params.input_width() {
        return Err(Error::Dimension(format!(
            "mlp input length {} != {}",
            x.len(),
            params.input_width()
        )));
    }
    Ok(mlp_trace(x, params).1)
}

fn mlp_trace<T: Scalar>(x: &[T], params: &MlpParams<T>) -> (MlpTrace<T>, T) {
    let mut inputs = vec![x.to_vec()];
    let mut pre = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let a = inputs.last().expect("nonempty");
        let mut z = layer.weight.mat_vec(a).expect("shapes checked");
        for (zi, &b) in z.iter_mut().zip(&layer.bias) {
            *zi += b;
        }
        let next = z.iter().map(|&zi| params.activation.apply(zi)).collect();
        pre.push(z);
        inputs.push(next);
    }
    let out = dot(inputs.last().expect("nonempty"), &params.out_weight) + params.out_bias;
    (MlpTrace { inputs, pre }, out)
}

/// Binary cross-entropy with `p` clamped to `[ε, 1 − ε]`, `ε = max(1e-12, machine ε)`.
pub fn bce_loss<T: Scalar>(p: T, y: u8) -> T {
    let eps = T::lit(1e-12).max(T::epsilon());
    let p = p.max(eps).min(T::one() - eps);
    if y == 1 {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

/// Mean BCE of a traced batch.
pub fn mean_loss<T: Scalar>(trace: &ForwardTrace<T>, labels: &[u8]) -> Result<T> {
    if labels.len() != trace.len() {
        return Err(Error::Dimension(format!(
            "{} labels for {} traced samples",
            labels.len(),
            trace.len()
        )));
    }
    let total: T = trace.samples.iter().zip(labels).map(|(s, &y)| bce_loss(s.prob, y)).sum();
    Ok(total / T::lit(labels.len() as f64))
}

/// Cached MLP activations: `inputs[l]` feeds layer `l`, `inputs[L]` feeds
/// the readout, `pre[l]` is layer `l`'s pre-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpTrace<T> {
    pub inputs: Vec<Vec<T>>,
    pub pre: Vec<Vec<T>>,
}

impl<T: Scalar> MlpTrace<T> {
    /// ReLU gate per hidden unit (`pre > 0`), layer by layer.
    pub fn masks(&self) -> Vec<Vec<bool>> {
        self.pre.iter().map(|z| z.iter().map(|&x| x > T::zero()).collect()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackboneTrace<T> {
    /// `field_sum = Σ v_i`; `interaction` is the bi-interaction vector
    /// (present for stacked heads).
    Fm { field_sum: Vec<T>, interaction: Option<Vec<T>> },
    /// `states[l]` is `x_l` (`states[0] = x0`), `gates[l] = W_l x_l + b_l`.
    Cross { states: Vec<Vec<T>>, gates: Vec<Vec<T>> },
}

/// Everything the backward pass needs for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace<T> {
    /// Concatenated field embeddings, length `F·k`.
    pub embeddings: Vec<T>,
    pub backbone: BackboneTrace<T>,
    pub mlp: Option<MlpTrace<T>>,
    /// Backbone logit; `None` for stacked heads, whose backbone emits a vector.
    pub backbone_logit: Option<T>,
    pub logit: T,
    pub prob: T,
}

/// Forward record of one batch, tied to the parameter values it used.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub(crate) stamp: u64,
    pub backbone: Backbone,
    pub head: Head,
    pub num_fields: usize,
    pub embedding_dim: usize,
    /// `len × num_fields` looked-up indices.
    pub indices: Vec<u32>,
    pub samples: Vec<SampleTrace<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn logits(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.logit).collect()
    }

    pub fn probs(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.prob).collect()
    }

    pub fn sample_indices(&self, s: usize) -> &[u32] {
        &self.indices[s * self.num_fields..(s + 1) * self.num_fields]
    }

    /// All ReLU gates of the batch, flattened in sample/layer/unit order.
    pub fn relu_masks(&self) -> Vec<bool> {
        if self.head.activation() != crate::model::Activation::Relu {
            return Vec::new();
        }
        self.samples
            .iter()
            .filter_map(|s| s.mlp.as_ref())
            .flat_map(|m| m.masks().into_iter().flatten())
            .collect()
    }

    /// Smallest |pre-activation| over all ReLU units, if there are any.
    pub fn relu_margin(&self) -> Option<T> {
        if !self.head.has_mlp() || self.head.activation() != crate::model::Activation::Relu {
            return None;
        }
        self.samples
            .iter()
            .filter_map(|s| s.mlp.as_ref())
            .flat_map(|m| m.pre.iter().flatten())
            .map(|x| x.abs())
            .reduce(T::min)
    }
}

/// Forward pass of one sample from its concatenated embeddings.
pub fn forward_sample<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    embeddings: &[T],
) -> Result<SampleTrace<T>> {
    let k = params.embedding_dim();
    let f = params.num_fields();
    if embeddings.len() != f * k {
        return Err(Error::Dimension(format!(
            "embedding input length {} != {f}x{k}",
            embeddings.len()
        )));
    }
    let fields: Vec<&[T]> = embeddings.chunks(k).collect();
    let stacked = spec.head.is_stacked();

    let (backbone, backbone_logit, interaction): (BackboneTrace<T>, Option<T>, Option<Vec<T>>) =
        match spec.backbone {
            Backbone::Fm => {
                let sum = field_sum(&fields);
                if stacked {
                    let bi = bi_interaction(&fields)?;
                    (
                        BackboneTrace::Fm { field_sum: sum, interaction: Some(bi.clone()) },
                        None,
                        Some(bi),
                    )
                } else {
                    let logit = fm_logit(&fields)?;
                    (BackboneTrace::Fm { field_sum: sum, interaction: None }, Some(logit), None)
                }
            }
            Backbone::CrossNet => {
                let cross = params
                    .cross()
                    .ok_or_else(|| Error::Schema("missing cross params".into()))?;
                cross.check_width(embeddings.len())?;
                let (states, gates) = cross_trace(embeddings, cross);
                let last = states.last().expect("nonempty").clone();
                if stacked {
                    (BackboneTrace::Cross { states, gates }, None, Some(last))
                } else {
                    let r = params
                        .readout()
                        .ok_or_else(|| Error::Schema("missing cross readout".into()))?;
                    let logit = dot(&r.weight, &last) + r.bias;
                    (BackboneTrace::Cross { states, gates }, Some(logit), None)
                }
            }
        };

    let (mlp, mlp_logit) = match spec.head {
        Head::None => (None, None),
        head => {
            let mlp = params.mlp().ok_or_else(|| Error::Schema("missing mlp params".into()))?;
            let input = if head.is_parallel() {
                embeddings
            } else {
                interaction.as_deref().expect("stacked heads produce an interaction vector")
            };
            if input.len() != mlp.input_width() {
                return Err(Error::Dimension(format!(
                    "mlp expects width {}, got {}",
                    mlp.input_width(),
                    input.len()
                )));
            }
            let (trace, out) = mlp_trace(input, mlp);
            (Some(trace), Some(out))
        }
    };

    let logit = match (backbone_logit, mlp_logit) {
        (Some(b), Some(m)) => b + m,
        (Some(b), None) => b,
        (None, Some(m)) => m,
        (None, None) => unreachable!("stacked heads always have an MLP"),
    };
    Ok(SampleTrace { embeddings: embeddings.to_vec(), backbone, mlp, backbone_logit, logit, prob: sigmoid(logit) })
}

/// Forward pass over a batch, recording a trace for backpropagation.
pub fn model_forward<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    batch: &Batch,
) -> Result<ForwardTrace<T>> {
    if batch.num_fields() != params.num_fields() {
        return Err(Error::Dimension(format!(
            "batch has {} fields, model {}",
            batch.num_fields(),
            params.num_fields()
        )));
    }
    if spec.backbone != params.backbone() || spec.head.has_mlp() != params.mlp().is_some() {
        return Err(Error::Schema(format!("parameters are not laid out for {}", spec.name())));
    }
    let k = params.embedding_dim();
    let tables = params.embeddings();
    let mut samples = Vec::with_capacity(batch.len());
    let mut indices = Vec::with_capacity(batch.len() * batch.num_fields());
    let mut emb = Vec::with_capacity(tables.len() * k);
    for s in 0..batch.len() {
        emb.clear();
        for (table, &ix) in tables.iter().zip(batch.sample(s)) {
            if ix as usize >= table.rows() {
                return Err(Error::IndexOutOfRange { index: ix as usize, bound: table.rows() });
            }
            emb.extend_from_slice(table.row(ix as usize));
        }
        indices.extend_from_slice(batch.sample(s));
        samples.push(forward_sample(spec, params, &emb)?);
    }
    Ok(ForwardTrace {
        stamp: params.stamp(),
        backbone: spec.backbone,
        head: spec.head,
        num_fields: tables.len(),
        embedding_dim: k,
        indices,
        samples,
    })
}
