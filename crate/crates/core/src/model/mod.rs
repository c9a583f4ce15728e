//! Encoder `f`, single projection head `g` and the mixture-of-embeddings head.
//!
//! Parameters are plain [`Tensor`]s owned by the modules. A training step
//! binds them onto a tape with [`Model::bind`] and gets back [`Var`] handles
//! in declaration order: encoder layers, then the optional warm-up head, then
//! the main head (component heads in order, gate last).

mod checkpoint;
mod layers;
mod mixture;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use layers::{Activation, Linear, Mlp};
pub use mixture::{dominant_components, MixtureBatch, MixtureHead, MixtureOutput, MixtureVars};

use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};
use crate::rng::Rng;
use layers::check_width;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub representation_dim: usize,
    /// Applied after every hidden layer; the output layer is linear.
    pub activation: Activation,
}

/// A one-hidden-layer ReLU projection `h → embedding`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionConfig {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureHeadConfig {
    pub num_components: usize,
    pub embedding_dim: usize,
    /// Hidden width of every component head and of the gate.
    pub hidden_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum HeadConfig {
    Single(ProjectionConfig),
    Mixture(MixtureHeadConfig),
}

impl HeadConfig {
    pub fn embedding_dim(&self) -> usize {
        match self {
            HeadConfig::Single(p) => p.embedding_dim,
            HeadConfig::Mixture(m) => m.embedding_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Projection used during the contrastive-only warm-up phase.
    pub base_head: Option<ProjectionConfig>,
    pub head: HeadConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        if e.input_dim == 0 || e.representation_dim == 0 || e.hidden_dims.contains(&0) {
            return Err(Error::contract("encoder dimensions must all be >= 1"));
        }
        let check_proj = |p: &ProjectionConfig| -> Result<()> {
            if p.hidden_dim == 0 || p.embedding_dim < 2 {
                return Err(Error::contract("head needs hidden_dim >= 1 and embedding_dim >= 2"));
            }
            if e.representation_dim < p.embedding_dim {
                return Err(Error::contract(format!(
                    "representation_dim {} is smaller than embedding_dim {}",
                    e.representation_dim, p.embedding_dim
                )));
            }
            Ok(())
        };
        if let Some(b) = &self.base_head {
            check_proj(b)?;
        }
        match &self.head {
            HeadConfig::Single(p) => check_proj(p),
            HeadConfig::Mixture(m) => {
                if m.num_components == 0 {
                    return Err(Error::contract("mixture head needs at least one component"));
                }
                check_proj(&ProjectionConfig {
                    embedding_dim: m.embedding_dim,
                    hidden_dim: m.hidden_dim,
                })
            }
        }
    }
}

/// MLP encoder producing representations `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub mlp: Mlp,
}

impl Encoder {
    pub fn init(config: &EncoderConfig, rng: &mut Rng) -> Self {
        let mut widths = vec![config.input_dim];
        widths.extend(&config.hidden_dims);
        widths.push(config.representation_dim);
        Encoder {
            mlp: Mlp::init(&widths, config.activation, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn representation_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    /// Representation of a single feature vector.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite input feature {bad}")));
        }
        Ok(self.mlp.forward(&Tensor::row_vector(x))?.into_data())
    }

    /// Representations of every row of an `[n, input_dim]` matrix.
    pub fn encode_batch(&self, x: &Tensor) -> Result<Tensor> {
        self.mlp.forward(x)
    }
}

/// Single non-linear projection `g`: Linear → ReLU → Linear.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead {
    pub mlp: Mlp,
}

impl ProjectionHead {
    pub fn init(input_dim: usize, config: &ProjectionConfig, rng: &mut Rng) -> Self {
        ProjectionHead {
            mlp: Mlp::init(
                &[input_dim, config.hidden_dim, config.embedding_dim],
                Activation::Relu,
                rng,
            ),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    /// Embedding `z = g(h)` of one representation.
    pub fn forward(&self, h: &[f64]) -> Result<Vec<f64>> {
        Ok(self.mlp.forward(&Tensor::row_vector(h))?.into_data())
    }

    pub fn forward_batch(&self, h: &Tensor) -> Result<Tensor> {
        self.mlp.forward(h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Single(ProjectionHead),
    Mixture(MixtureHead),
}

impl Head {
    fn param_count(&self) -> usize {
        match self {
            Head::Single(p) => p.mlp.param_count(),
            Head::Mixture(m) => m.param_count(),
        }
    }

    fn parameters(&self) -> Vec<&Tensor> {
        match self {
            Head::Single(p) => p.mlp.parameters(),
            Head::Mixture(m) => m.parameters(),
        }
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Head::Single(p) => p.mlp.parameters_mut(),
            Head::Mixture(m) => m.parameters_mut(),
        }
    }
}

/// Head outputs recorded on a tape.
#[derive(Clone, Debug)]
pub enum HeadVars {
    Single { embedding: Var },
    Mixture(MixtureVars),
}

impl HeadVars {
    /// The embedding the contrastive loss sees (`z`).
    pub fn embedding(&self) -> Var {
        match self {
            HeadVars::Single { embedding } => *embedding,
            HeadVars::Mixture(m) => m.combined,
        }
    }
}

/// Parameter handles of a model bound onto a tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub vars: Vec<Var>,
    encoder_end: usize,
    base_end: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub base_head: Option<ProjectionHead>,
    pub head: Head,
}

impl Model {
    /// Draws every parameter from `rng` in declaration order.
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::init(&config.encoder, rng);
        let rep = config.encoder.representation_dim;
        let base_head = config.base_head.as_ref().map(|b| ProjectionHead::init(rep, b, rng));
        let head = match &config.head {
            HeadConfig::Single(p) => Head::Single(ProjectionHead::init(rep, p, rng)),
            HeadConfig::Mixture(m) => Head::Mixture(MixtureHead::init(rep, m, rng)),
        };
        Ok(Model {
            config: config.clone(),
            encoder,
            base_head,
            head,
        })
    }

    pub fn num_components(&self) -> Option<usize> {
        match &self.head {
            Head::Single(_) => None,
            Head::Mixture(m) => Some(m.num_components()),
        }
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = self.encoder.mlp.parameters();
        if let Some(b) = &self.base_head {
            out.extend(b.mlp.parameters());
        }
        out.extend(self.head.parameters());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.mlp.parameters_mut();
        if let Some(b) = &mut self.base_head {
            out.extend(b.mlp.parameters_mut());
        }
        out.extend(self.head.parameters_mut());
        out
    }

    /// Records every parameter as a leaf (`trainable` selects param vs constant).
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let vars = self
            .parameters()
            .into_iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        let encoder_end = self.encoder.mlp.param_count();
        let base_end = encoder_end + self.base_head.as_ref().map_or(0, |b| b.mlp.param_count());
        debug_assert_eq!(base_end + self.head.param_count(), self.parameters().len());
        BoundModel {
            vars,
            encoder_end,
            base_end,
        }
    }

    /// Wraps handles already on a tape, one per parameter in declaration
    /// order (as supplied by a gradient check, for instance).
    pub fn bind_vars(&self, vars: Vec<Var>) -> Result<BoundModel> {
        let expected = self.parameters().len();
        if vars.len() != expected {
            return Err(Error::contract(format!("{} handles for {expected} parameters", vars.len())));
        }
        let encoder_end = self.encoder.mlp.param_count();
        let base_end = encoder_end + self.base_head.as_ref().map_or(0, |b| b.mlp.param_count());
        Ok(BoundModel {
            vars,
            encoder_end,
            base_end,
        })
    }

    pub fn encode_on(&self, tape: &mut Tape, bound: &BoundModel, x: Var) -> Result<Var> {
        check_width(tape.value(x), self.encoder.input_dim())?;
        self.encoder.mlp.forward_on(tape, &bound.vars[..bound.encoder_end], x)
    }

    pub fn base_head_on(&self, tape: &mut Tape, bound: &BoundModel, h: Var) -> Result<Var> {
        let base = self
            .base_head
            .as_ref()
            .ok_or_else(|| Error::contract("model has no warm-up head"))?;
        base.mlp.forward_on(tape, &bound.vars[bound.encoder_end..bound.base_end], h)
    }

    pub fn head_on(&self, tape: &mut Tape, bound: &BoundModel, h: Var) -> Result<HeadVars> {
        let vars = &bound.vars[bound.base_end..];
        match &self.head {
            Head::Single(p) => Ok(HeadVars::Single {
                embedding: p.mlp.forward_on(tape, vars, h)?,
            }),
            Head::Mixture(m) => Ok(HeadVars::Mixture(m.forward_on(tape, vars, h)?)),
        }
    }

    /// Representations `h` for every row of `features`.
    pub fn representations(&self, features: &Tensor) -> Result<Tensor> {
        self.encoder.encode_batch(features)
    }

    /// Encoder plus mixture head on a batch, no gradients.
    pub fn mixture_batch(&self, features: &Tensor) -> Result<(Tensor, MixtureBatch)> {
        let Head::Mixture(m) = &self.head else {
            return Err(Error::contract("model has a single projection head, not a mixture"));
        };
        let h = self.representations(features)?;
        let out = m.forward_batch(&h)?;
        Ok((h, out))
    }
}
