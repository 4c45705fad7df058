//! Central-difference gradient oracle.

use crate::autograd::GradBundle;
use crate::data::Batch;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::model::{bce_loss, forward_sample, mean_loss, model_forward, ModelParams, ModelSpec};
use crate::scalar::Scalar;

/// A single scalar parameter: tensor position in canonical order plus the
/// row-major offset inside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Coord {
    pub tensor: usize,
    pub offset: usize,
}

/// Every scalar coordinate of `params` in canonical order.
pub fn all_coords<T: Scalar>(params: &ModelParams<T>) -> Vec<Coord> {
    params
        .tensors()
        .iter()
        .enumerate()
        .flat_map(|(tensor, t)| (0..t.data.len()).map(move |offset| Coord { tensor, offset }))
        .collect()
}

/// `(f(x + h) − f(x − h)) / 2h`.
pub fn central_difference<T: Scalar>(f: impl Fn(T) -> T, x: T, h: T) -> T {
    (f(x + h) - f(x - h)) / (h + h)
}

struct Eval<T> {
    loss: T,
    masks: Vec<bool>,
}

fn evaluate<T: Scalar>(spec: &ModelSpec, params: &ModelParams<T>, batch: &Batch) -> Result<Eval<T>> {
    let trace = model_forward(spec, params, batch)?;
    Ok(Eval { loss: mean_loss(&trace, batch.labels())?, masks: trace.relu_masks() })
}

fn probe<T: Scalar>(
    spec: &ModelSpec,
    work: &mut ModelParams<T>,
    batch: &Batch,
    coord: Coord,
    h: T,
) -> Result<(T, Eval<T>, Eval<T>)> {
    let original = work.get(coord.tensor, coord.offset);
    work.tensors_mut()[coord.tensor][coord.offset] = original + h;
    let plus = evaluate(spec, work, batch)?;
    work.tensors_mut()[coord.tensor][coord.offset] = original - h;
    let minus = evaluate(spec, work, batch)?;
    work.tensors_mut()[coord.tensor][coord.offset] = original;
    Ok(((plus.loss - minus.loss) / (h + h), plus, minus))
}

/// Finite-difference gradients of the mean batch BCE at the given
/// coordinates. `None` marks a coordinate whose ±h perturbation flips a ReLU
/// gate, where the difference quotient straddles a kink.
pub fn finite_diff_at<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    batch: &Batch,
    h: T,
    coords: &[Coord],
) -> Result<Vec<Option<T>>> {
    assert!(h > T::zero(), "finite difference step must be positive");
    let base = evaluate(spec, params, batch)?;
    let mut work = params.clone();
    coords
        .iter()
        .map(|&c| {
            let (g, plus, minus) = probe(spec, &mut work, batch, c, h)?;
            let kinked = plus.masks != base.masks || minus.masks != base.masks;
            Ok((!kinked).then_some(g))
        })
        .collect()
}

/// Finite-difference estimate of every gradient in a [`GradBundle`],
/// including the per-sample embedding gradients.
pub fn finite_diff<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    batch: &Batch,
    h: T,
) -> Result<GradBundle<T>> {
    assert!(h > T::zero(), "finite difference step must be positive");
    let mut grads = params.zeros_like();
    let mut work = params.clone();
    let coords = all_coords(params);
    let mut values = Vec::with_capacity(coords.len());
    for &c in &coords {
        values.push(probe(spec, &mut work, batch, c, h)?.0);
    }
    {
        let mut slots = grads.tensors_mut();
        for (c, v) in coords.iter().zip(values) {
            slots[c.tensor][c.offset] = v;
        }
    }

    // Per-sample embedding gradients: perturb the gathered embeddings of one
    // sample; its loss enters the mean with weight 1/B.
    let k = params.embedding_dim();
    let f = params.num_fields();
    let inv_b = T::one() / T::lit(batch.len() as f64);
    let mut sample_grads = Matrix::zeros(batch.len(), f * k);
    for s in 0..batch.len() {
        let mut emb: Vec<T> = Vec::with_capacity(f * k);
        for (table, &ix) in params.embeddings().iter().zip(batch.sample(s)) {
            emb.extend_from_slice(table.row(ix as usize));
        }
        let y = batch.labels()[s];
        for j in 0..f * k {
            let x = emb[j];
            let g = central_difference(
                |xj| {
                    let mut e = emb.clone();
                    e[j] = xj;
                    let p = forward_sample(spec, params, &e).expect("shapes match").prob;
                    bce_loss(p, y)
                },
                x,
                h,
            );
            sample_grads[(s, j)] = g * inv_b;
        }
    }
    Ok(GradBundle { params: grads, sample_embedding_grads: sample_grads })
}
