use crate::autograd::GradBundle;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimKind::Sgd),
            "adam" => Ok(OptimKind::Adam),
            _ => Err(Error::Config(format!("unknown optimizer {s:?} (sgd|adam)"))),
        }
    }
}

impl std::fmt::Display for OptimKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimKind::Sgd => "sgd",
            OptimKind::Adam => "adam",
        })
    }
}

/// Optimizer state: plain SGD, or Adam with `(β1, β2, ε) = (0.9, 0.999, 1e-8)`.
#[derive(Debug, Clone)]
pub struct OptimState<T> {
    pub kind: OptimKind,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(kind: OptimKind, lr: T) -> Self {
        Self {
            kind,
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn sgd(lr: T) -> Self {
        Self::new(OptimKind::Sgd, lr)
    }

    pub fn adam(lr: T) -> Self {
        Self::new(OptimKind::Adam, lr)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &GradBundle<T>) -> Result<()> {
        if params.shapes() != grads.params.shapes() {
            return Err(Error::Dimension("gradient layout does not match parameters".into()));
        }
        let g = grads.params.tensors();
        if self.kind == OptimKind::Adam && self.first.is_empty() {
            self.first = g.iter().map(|t| vec![T::zero(); t.data.len()]).collect();
            self.second = self.first.clone();
        }
        if self.kind == OptimKind::Adam && self.first.iter().map(Vec::len).ne(g.iter().map(|t| t.data.len())) {
            return Err(Error::Dimension("optimizer state does not match parameters".into()));
        }
        self.steps += 1;
        match self.kind {
            OptimKind::Sgd => {
                for (p, gt) in params.tensors_mut().into_iter().zip(&g) {
                    for (x, &gi) in p.iter_mut().zip(gt.data) {
                        *x -= self.lr * gi;
                    }
                }
            }
            OptimKind::Adam => {
                let t = self.steps as i32;
                let c1 = T::one() - self.beta1.powi(t);
                let c2 = T::one() - self.beta2.powi(t);
                for (((p, gt), m), v) in
                    params.tensors_mut().into_iter().zip(&g).zip(&mut self.first).zip(&mut self.second)
                {
                    for (((x, &gi), mi), vi) in p.iter_mut().zip(gt.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = self.beta1 * *mi + (T::one() - self.beta1) * gi;
                        *vi = self.beta2 * *vi + (T::one() - self.beta2) * gi * gi;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::{Backbone, Head, ModelSpec};

    fn single(value: f64) -> ModelParams<f64> {
        let spec = ModelSpec { embedding_dim: 1, ..ModelSpec::new(Backbone::Fm, Head::None) };
        let mut p = ModelParams::zeros(&spec, &[1, 1]).unwrap();
        p.embeddings_mut()[0][(0, 0)] = value;
        p
    }

    fn grads_of(g: f64) -> GradBundle<f64> {
        GradBundle { params: single(g), sample_embedding_grads: Matrix::zeros(1, 2) }
    }

    #[test]
    fn sgd_single_step() {
        let mut p = single(1.0);
        OptimState::sgd(0.1).step(&mut p, &grads_of(2.0)).unwrap();
        assert!((p.embeddings()[0][(0, 0)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_noop() {
        for mut opt in [OptimState::sgd(0.1), OptimState::adam(0.1)] {
            let mut p = single(1.5);
            opt.step(&mut p, &grads_of(0.0)).unwrap();
            assert_eq!(p.embeddings()[0][(0, 0)], 1.5);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε) ≈ lr
        for g in [3.0, -0.02, 250.0] {
            let mut p = single(0.0);
            OptimState::adam(1e-3).step(&mut p, &grads_of(g)).unwrap();
            let moved = -p.embeddings()[0][(0, 0)];
            assert!((moved - 1e-3 * g.signum()).abs() < 1e-9, "g={g}: {moved}");
        }
    }

    #[test]
    fn layout_mismatch_errors() {
        let spec = ModelSpec::new(Backbone::Fm, Head::PDnn);
        let g = GradBundle {
            params: ModelParams::zeros(&spec, &[2, 2]).unwrap(),
            sample_embedding_grads: Matrix::zeros(1, 16),
        };
        let mut p = single(0.0);
        assert!(matches!(OptimState::sgd(0.1).step(&mut p, &g), Err(Error::Dimension(_))));
    }
}
