//! Feature-interaction models over a shared per-field embedding table.
//!
//! Two interaction backbones (FM, CrossNet) combine with five heads:
//!
//! | head            | logit                                        |
//! |-----------------|----------------------------------------------|
//! | `none`          | backbone logit                               |
//! | `p_dnn`         | backbone logit + MLP(concat embeddings)      |
//! | `linear_p_dnn`  | same, identity activations                   |
//! | `s_dnn`         | MLP(interaction vector)                      |
//! | `linear_s_dnn`  | same, identity activations                   |
//!
//! The FM interaction vector is the bi-interaction pooling
//! `Σ_{i<j} v_i ⊙ v_j`; the CrossNet interaction vector is the final cross
//! state.

mod checkpoint;
mod forward;
mod params;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use forward::{
    bce_loss, bi_interaction, cross_forward, fm_logit, fm_logit_squared_sum, forward_sample,
    mean_loss, mlp_forward, model_forward, BackboneTrace, ForwardTrace, MlpTrace, SampleTrace,
};
pub use params::{CrossParams, Dense, MlpParams, ModelParams, Readout, TensorView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backbone {
    Fm,
    CrossNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    None,
    PDnn,
    SDnn,
    LinearPDnn,
    LinearSDnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub(crate) fn apply<T: crate::Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Identity => x,
        }
    }

    /// Derivative; the ReLU subgradient at exactly zero is zero.
    #[inline]
    pub(crate) fn derivative<T: crate::Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu if x > T::zero() => T::one(),
            Activation::Relu => T::zero(),
            Activation::Identity => T::one(),
        }
    }
}

impl Head {
    pub const ALL: [Head; 5] = [Head::None, Head::PDnn, Head::SDnn, Head::LinearPDnn, Head::LinearSDnn];

    pub fn is_parallel(self) -> bool {
        matches!(self, Head::PDnn | Head::LinearPDnn)
    }

    pub fn is_stacked(self) -> bool {
        matches!(self, Head::SDnn | Head::LinearSDnn)
    }

    pub fn has_mlp(self) -> bool {
        self != Head::None
    }

    pub fn activation(self) -> Activation {
        match self {
            Head::LinearPDnn | Head::LinearSDnn => Activation::Identity,
            _ => Activation::Relu,
        }
    }
}

impl Backbone {
    pub const ALL: [Backbone; 2] = [Backbone::Fm, Backbone::CrossNet];
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::Fm => "fm",
            Backbone::CrossNet => "crossnet",
        })
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fm" => Ok(Backbone::Fm),
            "crossnet" => Ok(Backbone::CrossNet),
            _ => Err(Error::Config(format!("unknown backbone {s:?} (fm|crossnet)"))),
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::None => "none",
            Head::PDnn => "p_dnn",
            Head::SDnn => "s_dnn",
            Head::LinearPDnn => "linear_p_dnn",
            Head::LinearSDnn => "linear_s_dnn",
        })
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Head::ALL
            .into_iter()
            .find(|h| h.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown head {s:?}")))
    }
}

/// Architecture and initialization settings of one model variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub backbone: Backbone,
    pub head: Head,
    /// Embedding dimension `k`.
    pub embedding_dim: usize,
    /// Hidden widths of the MLP head (ignored when `head == None`).
    pub hidden: Vec<usize>,
    pub cross_depth: usize,
    /// Standard deviation of the Gaussian embedding initializer.
    pub init_std: f64,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(backbone: Backbone, head: Head) -> Self {
        Self {
            backbone,
            head,
            embedding_dim: 8,
            hidden: vec![64, 64],
            cross_depth: 2,
            init_std: 0.01,
            seed: 0,
        }
    }

    /// All ten backbone/head combinations.
    pub fn variants() -> impl Iterator<Item = (Backbone, Head)> {
        Backbone::ALL.into_iter().flat_map(|b| Head::ALL.into_iter().map(move |h| (b, h)))
    }

    pub fn name(&self) -> String {
        format!("{}+{}", self.backbone, self.head)
    }

    pub fn validate(&self, num_fields: usize) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be >= 1".into()));
        }
        if self.head.has_mlp() && (self.hidden.is_empty() || self.hidden.contains(&0)) {
            return Err(Error::Config(format!("invalid MLP hidden widths {:?}", self.hidden)));
        }
        if self.backbone == Backbone::Fm && num_fields < 2 {
            return Err(Error::Arity(format!("FM needs at least 2 fields, got {num_fields}")));
        }
        if num_fields == 0 {
            return Err(Error::Arity("model needs at least one field".into()));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config(format!("init_std {} invalid", self.init_std)));
        }
        Ok(())
    }

    /// Width of the vector the MLP head consumes.
    pub fn mlp_input_width(&self, num_fields: usize) -> usize {
        match (self.head.is_stacked(), self.backbone) {
            (true, Backbone::Fm) => self.embedding_dim,
            _ => num_fields * self.embedding_dim,
        }
    }
}
