//! Closed-form embedding gradients of the logit for FM and for FM with a
//! one-hidden-layer DNN attached in parallel or stacked, plus a subspace
//! residual used to test where those gradients can point.
//!
//! These are written directly from the matrix algebra and share no code with
//! the model's forward/backward passes, so they can serve as an oracle.

mod oracle;

pub use oracle::{random_instance, Instance, OracleKind, OracleReport};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::Activation;
use crate::scalar::{dot, norm2, Scalar};

/// One hidden layer `Φ_DNN(x) = w_outᵀ act(W_in x + b)`.
///
/// `W_in` is `H × F·k` when the network reads the concatenated embeddings and
/// `H × k` when it reads the bi-interaction vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHiddenConfig<T> {
    pub w_in: Matrix<T>,
    pub b: Vec<T>,
    pub w_out: Vec<T>,
    pub fields: usize,
    pub dim: usize,
    /// `Relu` gives `D = diag(𝕀(W_in x + b > 0))`; `Identity` forces `D = I`.
    pub activation: Activation,
}

impl<T: Scalar> OneHiddenConfig<T> {
    pub fn new(w_in: Matrix<T>, b: Vec<T>, w_out: Vec<T>, fields: usize, dim: usize) -> Result<Self> {
        let cfg = Self { w_in, b, w_out, fields, dim, activation: Activation::Relu };
        let h = cfg.hidden();
        if h == 0 || cfg.b.len() != h || cfg.w_out.len() != h {
            return Err(Error::Dimension(format!(
                "W_in has {h} rows, b {} entries, w_out {}",
                cfg.b.len(),
                cfg.w_out.len()
            )));
        }
        if cfg.w_in.cols() != fields * dim && cfg.w_in.cols() != dim {
            return Err(Error::Dimension(format!(
                "W_in has {} columns, expected {} or {dim}",
                cfg.w_in.cols(),
                fields * dim
            )));
        }
        Ok(cfg)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn hidden(&self) -> usize {
        self.w_in.rows()
    }

    /// Pre-activations `W_in x + b`.
    pub fn pre_activation(&self, x: &[T]) -> Result<Vec<T>> {
        let mut z = self.w_in.mat_vec(x)?;
        for (zi, &bi) in z.iter_mut().zip(&self.b) {
            *zi += bi;
        }
        Ok(z)
    }

    /// Row vector `w_outᵀ D W_in` evaluated at input `x`.
    pub fn masked_row(&self, x: &[T]) -> Result<Vec<T>> {
        let pre = self.pre_activation(x)?;
        let weights: Vec<T> =
            pre.iter().zip(&self.w_out).map(|(&z, &w)| w * self.activation.derivative(z)).collect();
        self.w_in.mat_t_vec(&weights)
    }
}

fn check_fields<T>(embeddings: &[&[T]], i: usize) -> Result<usize> {
    if embeddings.len() < 2 {
        return Err(Error::Arity(format!("need at least 2 fields, got {}", embeddings.len())));
    }
    if i >= embeddings.len() {
        return Err(Error::IndexOutOfRange { index: i, bound: embeddings.len() });
    }
    let k = embeddings[0].len();
    if embeddings.iter().any(|v| v.len() != k) {
        return Err(Error::Dimension("embeddings differ in length".into()));
    }
    Ok(k)
}

fn check_cfg<T: Scalar>(cfg: &OneHiddenConfig<T>, f: usize, k: usize, width: usize) -> Result<()> {
    if cfg.fields != f || cfg.dim != k || cfg.w_in.cols() != width {
        return Err(Error::Dimension(format!(
            "config is for F={}, k={}, input width {}; got F={f}, k={k}, width {width}",
            cfg.fields,
            cfg.dim,
            cfg.w_in.cols()
        )));
    }
    Ok(())
}

/// `∂Φ_FM/∂v_i = Σ_{j≠i} v_j`.
pub fn fm_grad<T: Scalar>(embeddings: &[&[T]], i: usize) -> Result<Vec<T>> {
    let k = check_fields(embeddings, i)?;
    let mut g = vec![T::zero(); k];
    for (j, v) in embeddings.iter().enumerate().filter(|&(j, _)| j != i) {
        debug_assert_ne!(j, i);
        for (gm, &x) in g.iter_mut().zip(*v) {
            *gm += x;
        }
    }
    Ok(g)
}

/// FM plus a parallel one-hidden-layer DNN on the concatenated embeddings:
/// `fm_grad(i) + (w_outᵀ D W_in) P_i`, with `P_i` selecting columns
/// `[i·k, (i+1)·k)`.
pub fn pdnn_grad<T: Scalar>(embeddings: &[&[T]], i: usize, cfg: &OneHiddenConfig<T>) -> Result<Vec<T>> {
    let k = check_fields(embeddings, i)?;
    let f = embeddings.len();
    check_cfg(cfg, f, k, f * k)?;
    let concat: Vec<T> = embeddings.concat();
    let row = cfg.masked_row(&concat)?;
    let mut g = fm_grad(embeddings, i)?;
    for (gm, &r) in g.iter_mut().zip(&row[i * k..(i + 1) * k]) {
        *gm += r;
    }
    Ok(g)
}

/// One-hidden-layer DNN stacked on the bi-interaction vector:
/// `g_DNN ⊙ Σ_{j≠i} v_j` with `g_DNN = w_outᵀ D W_in`.
pub fn sdnn_grad<T: Scalar>(embeddings: &[&[T]], i: usize, cfg: &OneHiddenConfig<T>) -> Result<Vec<T>> {
    let k = check_fields(embeddings, i)?;
    check_cfg(cfg, embeddings.len(), k, k)?;
    let g_dnn = cfg.masked_row(&bi_interaction(embeddings))?;
    let others = fm_grad(embeddings, i)?;
    Ok(g_dnn.iter().zip(&others).map(|(&a, &b)| a * b).collect())
}

/// `Σ_{i<j} v_i ⊙ v_j`, via `½((Σ v)² − Σ v²)` per component.
fn bi_interaction<T: Scalar>(embeddings: &[&[T]]) -> Vec<T> {
    let k = embeddings[0].len();
    (0..k)
        .map(|m| {
            let s: T = embeddings.iter().map(|v| v[m]).sum();
            let sq: T = embeddings.iter().map(|v| v[m] * v[m]).sum();
            (s * s - sq) * T::lit(0.5)
        })
        .collect()
}

/// Norm of the part of `grad` orthogonal to `span(basis)`.
///
/// Modified Gram–Schmidt with one reorthogonalization pass; basis vectors
/// whose remaining norm falls below `1e-10 · max‖b‖` are treated as
/// dependent and dropped.
pub fn span_check<T: Scalar>(grad: &[T], basis: &[&[T]]) -> Result<T> {
    if basis.is_empty() {
        return Err(Error::Arity("span_check needs a nonempty basis".into()));
    }
    if basis.iter().any(|b| b.len() != grad.len()) {
        return Err(Error::Dimension("basis vectors differ in length from grad".into()));
    }
    let scale = basis.iter().map(|b| norm2(b)).fold(T::zero(), T::max);
    let cutoff = T::lit(1e-10) * scale;
    let mut ortho: Vec<Vec<T>> = Vec::new();
    for b in basis {
        let mut u = b.to_vec();
        for _ in 0..2 {
            for q in &ortho {
                subtract_projection(&mut u, q);
            }
        }
        let n = norm2(&u);
        if n > cutoff && n > T::zero() {
            u.iter_mut().for_each(|x| *x /= n);
            ortho.push(u);
        }
    }
    let mut r = grad.to_vec();
    for _ in 0..2 {
        for q in &ortho {
            subtract_projection(&mut r, q);
        }
    }
    Ok(norm2(&r))
}

fn subtract_projection<T: Scalar>(u: &mut [T], unit: &[T]) {
    let c = dot(u, unit);
    for (x, &q) in u.iter_mut().zip(unit) {
        *x -= c * q;
    }
}
