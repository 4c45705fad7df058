use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Activation, Backbone, ModelSpec};
use crate::scalar::Scalar;

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Fully connected layer `y = W x + b`, `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Matrix::zeros(outputs, inputs), bias: vec![T::zero(); outputs] }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }
}

/// MLP head: hidden layers, then a scalar readout `w_out · a + b_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    pub layers: Vec<Dense<T>>,
    pub out_weight: Vec<T>,
    pub out_bias: T,
    pub activation: Activation,
}

impl<T: Scalar> MlpParams<T> {
    pub fn zeros(input: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = input;
        for &h in hidden {
            layers.push(Dense::zeros(width, h));
            width = h;
        }
        Self { layers, out_weight: vec![T::zero(); width], out_bias: T::zero(), activation }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(self.out_weight.len(), Dense::inputs)
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let mut width = self.input_width();
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.inputs() != width || layer.bias.len() != layer.outputs() {
                return Err(Error::Dimension(format!("mlp layer {l} does not chain")));
            }
            width = layer.outputs();
        }
        if self.out_weight.len() != width {
            return Err(Error::Dimension(format!(
                "mlp output weight length {} != last width {width}",
                self.out_weight.len()
            )));
        }
        Ok(())
    }
}

/// Cross layers `x_{l+1} = x0 ⊙ (W_l x_l + b_l) + x_l` with square `W_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossParams<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> CrossParams<T> {
    pub fn zeros(width: usize, depth: usize) -> Self {
        Self { layers: (0..depth).map(|_| Dense::zeros(width, width)).collect() }
    }

    pub(crate) fn check_width(&self, width: usize) -> Result<()> {
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.inputs() != width || layer.outputs() != width || layer.bias.len() != width {
                return Err(Error::Dimension(format!(
                    "cross layer {l} is {:?}, input width {width}",
                    layer.weight.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Scalar linear readout of the final cross state.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout<T> {
    pub weight: Vec<T>,
    pub bias: T,
}

/// Borrowed view of one named parameter tensor.
#[derive(Debug, Clone, Copy)]
pub struct TensorView<'a, T> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [T],
}

/// Every learnable tensor of a model variant.
///
/// Each instance carries a stamp that changes whenever the parameters are
/// mutated through this API, so traces recorded against older values can be
/// detected.
#[derive(Debug, PartialEq)]
pub struct ModelParams<T> {
    backbone: Backbone,
    embedding_dim: usize,
    embeddings: Vec<Matrix<T>>,
    cross: Option<CrossParams<T>>,
    readout: Option<Readout<T>>,
    mlp: Option<MlpParams<T>>,
    stamp: u64,
}

impl<T: Scalar> Clone for ModelParams<T> {
    fn clone(&self) -> Self {
        Self {
            backbone: self.backbone,
            embedding_dim: self.embedding_dim,
            embeddings: self.embeddings.clone(),
            cross: self.cross.clone(),
            readout: self.readout.clone(),
            mlp: self.mlp.clone(),
            stamp: fresh_stamp(),
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Assembles parameters from parts, checking that they fit together.
    pub fn from_parts(
        backbone: Backbone,
        embeddings: Vec<Matrix<T>>,
        cross: Option<CrossParams<T>>,
        readout: Option<Readout<T>>,
        mlp: Option<MlpParams<T>>,
    ) -> Result<Self> {
        let k = embeddings.first().map(Matrix::cols).ok_or_else(|| {
            Error::Arity("model needs at least one embedding table".into())
        })?;
        if embeddings.iter().any(|e| e.cols() != k) {
            return Err(Error::Dimension("embedding tables disagree on dimension".into()));
        }
        let width = embeddings.len() * k;
        match backbone {
            Backbone::Fm => {
                if cross.is_some() || readout.is_some() {
                    return Err(Error::Schema("FM backbone takes no cross/readout params".into()));
                }
            }
            Backbone::CrossNet => {
                let c = cross
                    .as_ref()
                    .ok_or_else(|| Error::Schema("CrossNet backbone needs cross params".into()))?;
                c.check_width(width)?;
            }
        }
        if let Some(r) = &readout {
            if r.weight.len() != width {
                return Err(Error::Dimension(format!(
                    "readout length {} != cross width {width}",
                    r.weight.len()
                )));
            }
        }
        if let Some(m) = &mlp {
            m.check_shapes()?;
        }
        Ok(Self {
            backbone,
            embedding_dim: k,
            embeddings,
            cross,
            readout,
            mlp,
            stamp: fresh_stamp(),
        })
    }

    /// Zero-valued parameters laid out for `spec` and the given vocabularies.
    pub fn zeros(spec: &ModelSpec, vocab_sizes: &[usize]) -> Result<Self> {
        spec.validate(vocab_sizes.len())?;
        let f = vocab_sizes.len();
        let k = spec.embedding_dim;
        let width = f * k;
        let embeddings = vocab_sizes.iter().map(|&v| Matrix::zeros(v.max(1), k)).collect();
        let (cross, readout) = match spec.backbone {
            Backbone::Fm => (None, None),
            Backbone::CrossNet => {
                let readout = (!spec.head.is_stacked())
                    .then(|| Readout { weight: vec![T::zero(); width], bias: T::zero() });
                (Some(CrossParams::zeros(width, spec.cross_depth)), readout)
            }
        };
        let mlp = spec.head.has_mlp().then(|| {
            MlpParams::zeros(spec.mlp_input_width(f), &spec.hidden, spec.head.activation())
        });
        Self::from_parts(spec.backbone, embeddings, cross, readout, mlp)
    }

    /// Random initialization: embeddings `N(0, init_std²)`, weight matrices
    /// Glorot-uniform `U(±√(6/(fan_in+fan_out)))`, biases zero.
    pub fn init(spec: &ModelSpec, vocab_sizes: &[usize]) -> Result<Self> {
        let mut p = Self::zeros(spec, vocab_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        if spec.init_std > 0.0 {
            let normal = Normal::new(0.0, spec.init_std).expect("valid std");
            for table in &mut p.embeddings {
                for x in table.as_mut_slice() {
                    *x = T::lit(normal.sample(&mut rng));
                }
            }
        }
        let mut glorot = |xs: &mut [T], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in xs {
                *x = T::lit(rng.random_range(-limit..limit));
            }
        };
        if let Some(c) = &mut p.cross {
            for layer in &mut c.layers {
                let (o, i) = layer.weight.shape();
                glorot(layer.weight.as_mut_slice(), i, o);
            }
        }
        if let Some(r) = &mut p.readout {
            let n = r.weight.len();
            glorot(&mut r.weight, n, 1);
        }
        if let Some(m) = &mut p.mlp {
            for layer in &mut m.layers {
                let (o, i) = layer.weight.shape();
                glorot(layer.weight.as_mut_slice(), i, o);
            }
            let n = m.out_weight.len();
            glorot(&mut m.out_weight, n, 1);
        }
        p.stamp = fresh_stamp();
        Ok(p)
    }

    /// Same layout with every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|x| *x = T::zero());
        }
        z
    }

    pub fn backbone(&self) -> Backbone {
        self.backbone
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn num_fields(&self) -> usize {
        self.embeddings.len()
    }

    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.embeddings.iter().map(Matrix::rows).collect()
    }

    pub fn embeddings(&self) -> &[Matrix<T>] {
        &self.embeddings
    }

    pub fn cross(&self) -> Option<&CrossParams<T>> {
        self.cross.as_ref()
    }

    pub fn readout(&self) -> Option<&Readout<T>> {
        self.readout.as_ref()
    }

    pub fn mlp(&self) -> Option<&MlpParams<T>> {
        self.mlp.as_ref()
    }

    pub fn embeddings_mut(&mut self) -> &mut [Matrix<T>] {
        self.stamp = fresh_stamp();
        &mut self.embeddings
    }

    pub fn cross_mut(&mut self) -> Option<&mut CrossParams<T>> {
        self.stamp = fresh_stamp();
        self.cross.as_mut()
    }

    pub fn readout_mut(&mut self) -> Option<&mut Readout<T>> {
        self.stamp = fresh_stamp();
        self.readout.as_mut()
    }

    pub fn mlp_mut(&mut self) -> Option<&mut MlpParams<T>> {
        self.stamp = fresh_stamp();
        self.mlp.as_mut()
    }

    pub(crate) fn stamp(&self) -> u64 {
        self.stamp
    }

    /// Checks that these parameters were laid out for `spec`.
    pub fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        let expected = Self::zeros(spec, &self.vocab_sizes())?;
        let ours: Vec<_> = self.tensor_names().into_iter().zip(self.shapes()).collect();
        let theirs: Vec<_> = expected.tensor_names().into_iter().zip(expected.shapes()).collect();
        if ours != theirs {
            return Err(Error::Schema(format!(
                "parameters do not match model {}: {:?} vs {:?}",
                spec.name(),
                ours,
                theirs
            )));
        }
        match (&self.mlp, spec.head.has_mlp()) {
            (Some(m), true) if m.activation != spec.head.activation() => Err(Error::Schema(
                format!("activation {:?} does not match head {}", m.activation, spec.head),
            )),
            _ => Ok(()),
        }
    }

    /// Tensor names in canonical order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> =
            (0..self.embeddings.len()).map(|f| format!("embedding.{f}")).collect();
        if let Some(c) = &self.cross {
            for l in 0..c.layers.len() {
                names.push(format!("cross.{l}.weight"));
                names.push(format!("cross.{l}.bias"));
            }
        }
        if self.readout.is_some() {
            names.push("readout.weight".into());
            names.push("readout.bias".into());
        }
        if let Some(m) = &self.mlp {
            for l in 0..m.layers.len() {
                names.push(format!("mlp.{l}.weight"));
                names.push(format!("mlp.{l}.bias"));
            }
            names.push("mlp.out.weight".into());
            names.push("mlp.out.bias".into());
        }
        names
    }

    /// Tensor views in canonical order; vectors appear as `1 × n`.
    pub fn tensors(&self) -> Vec<TensorView<'_, T>> {
        fn mat<T: Scalar>(m: &Matrix<T>) -> TensorView<'_, T> {
            TensorView { rows: m.rows(), cols: m.cols(), data: m.as_slice() }
        }
        fn vec<T>(v: &[T]) -> TensorView<'_, T> {
            TensorView { rows: 1, cols: v.len(), data: v }
        }
        let mut out: Vec<TensorView<'_, T>> = self.embeddings.iter().map(mat).collect();
        if let Some(c) = &self.cross {
            for layer in &c.layers {
                out.push(mat(&layer.weight));
                out.push(vec(&layer.bias));
            }
        }
        if let Some(r) = &self.readout {
            out.push(vec(&r.weight));
            out.push(vec(std::slice::from_ref(&r.bias)));
        }
        if let Some(m) = &self.mlp {
            for layer in &m.layers {
                out.push(mat(&layer.weight));
                out.push(vec(&layer.bias));
            }
            out.push(vec(&m.out_weight));
            out.push(vec(std::slice::from_ref(&m.out_bias)));
        }
        out
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|t| (t.rows, t.cols)).collect()
    }

    /// Mutable tensor slices in canonical order. Invalidates earlier traces.
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.stamp = fresh_stamp();
        let mut out: Vec<&mut [T]> = self.embeddings.iter_mut().map(Matrix::as_mut_slice).collect();
        if let Some(c) = &mut self.cross {
            for layer in &mut c.layers {
                out.push(layer.weight.as_mut_slice());
                out.push(&mut layer.bias);
            }
        }
        if let Some(r) = &mut self.readout {
            out.push(&mut r.weight);
            out.push(std::slice::from_mut(&mut r.bias));
        }
        if let Some(m) = &mut self.mlp {
            for layer in &mut m.layers {
                out.push(layer.weight.as_mut_slice());
                out.push(&mut layer.bias);
            }
            out.push(&mut m.out_weight);
            out.push(std::slice::from_mut(&mut m.out_bias));
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Reads one scalar by `(tensor, offset)` in canonical order.
    pub fn get(&self, tensor: usize, offset: usize) -> T {
        self.tensors()[tensor].data[offset]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Head;

    #[test]
    fn layouts_follow_variant() {
        let vocab = [5, 7, 3];
        for (b, h) in ModelSpec::variants() {
            let spec = ModelSpec { hidden: vec![4, 3], ..ModelSpec::new(b, h) };
            let p = ModelParams::<f64>::init(&spec, &vocab).unwrap();
            let names = p.tensor_names();
            assert_eq!(names.len(), p.tensors().len());
            assert_eq!(names.iter().any(|n| n.starts_with("cross")), b == Backbone::CrossNet);
            assert_eq!(names.iter().any(|n| n.starts_with("mlp")), h != Head::None);
            assert_eq!(
                names.iter().any(|n| n.starts_with("readout")),
                b == Backbone::CrossNet && !h.is_stacked()
            );
            p.check_spec(&spec).unwrap();
        }
    }

    #[test]
    fn stacked_fm_mlp_consumes_k_vector() {
        let spec = ModelSpec { embedding_dim: 5, hidden: vec![3], ..ModelSpec::new(Backbone::Fm, Head::SDnn) };
        let p = ModelParams::<f64>::zeros(&spec, &[4, 4, 4]).unwrap();
        assert_eq!(p.mlp().unwrap().input_width(), 5);
        let spec = ModelSpec { head: Head::PDnn, ..spec };
        let p = ModelParams::<f64>::zeros(&spec, &[4, 4, 4]).unwrap();
        assert_eq!(p.mlp().unwrap().input_width(), 15);
    }

    #[test]
    fn init_is_seeded() {
        let spec = ModelSpec::new(Backbone::CrossNet, Head::PDnn);
        let a = ModelParams::<f64>::init(&spec, &[6, 6]).unwrap();
        let b = ModelParams::<f64>::init(&spec, &[6, 6]).unwrap();
        assert_eq!(a.tensors().iter().map(|t| t.data.to_vec()).collect::<Vec<_>>(),
                   b.tensors().iter().map(|t| t.data.to_vec()).collect::<Vec<_>>());
        assert!(a.mlp().unwrap().layers[0].bias.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mutation_and_clone_restamp() {
        let spec = ModelSpec::new(Backbone::Fm, Head::None);
        let mut p = ModelParams::<f64>::init(&spec, &[3, 3]).unwrap();
        let s0 = p.stamp();
        assert_ne!(p.clone().stamp(), s0);
        p.tensors_mut();
        assert_ne!(p.stamp(), s0);
    }

    #[test]
    fn mismatched_spec_is_schema_error() {
        let p = ModelParams::<f64>::zeros(&ModelSpec::new(Backbone::Fm, Head::PDnn), &[3, 3]).unwrap();
        let err = p.check_spec(&ModelSpec::new(Backbone::Fm, Head::None)).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        let err = p.check_spec(&ModelSpec::new(Backbone::Fm, Head::LinearPDnn)).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn fm_needs_two_fields() {
        let spec = ModelSpec::new(Backbone::Fm, Head::None);
        assert!(matches!(ModelParams::<f64>::zeros(&spec, &[3]), Err(Error::Arity(_))));
    }
}
