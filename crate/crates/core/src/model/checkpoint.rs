//! `MIXEM1` checkpoint files.
//!
//! Layout (all integers `u32` little-endian, floats `f64` little-endian):
//!
//! ```text
//! "MIXEM1"
//! input_dim
//! hidden_count, hidden_dims[hidden_count]
//! representation_dim
//! activation: u8 (0 identity, 1 relu, 2 tanh)
//! has_base_head: u8; if 1: base_embedding_dim, base_hidden_dim
//! head_kind: u8 (0 single, 1 mixture)
//! num_components (1 for a single head), embedding_dim, head_hidden_dim
//! tensor_count
//! per tensor, in parameter declaration order: rows, cols, rows*cols values
//! ```

use std::fs;
use std::path::Path;

use super::{Activation, EncoderConfig, HeadConfig, MixtureHeadConfig, Model, ModelConfig, ProjectionConfig};
use crate::binio::{put_f64s, put_u32, to_u32, Reader};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"MIXEM1";

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let cfg = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, to_u32(cfg.encoder.input_dim, "input_dim")?);
    put_u32(&mut out, to_u32(cfg.encoder.hidden_dims.len(), "hidden_count")?);
    for &h in &cfg.encoder.hidden_dims {
        put_u32(&mut out, to_u32(h, "hidden_dim")?);
    }
    put_u32(&mut out, to_u32(cfg.encoder.representation_dim, "representation_dim")?);
    out.push(cfg.encoder.activation.code());
    match &cfg.base_head {
        None => out.push(0),
        Some(b) => {
            out.push(1);
            put_u32(&mut out, to_u32(b.embedding_dim, "base_embedding_dim")?);
            put_u32(&mut out, to_u32(b.hidden_dim, "base_hidden_dim")?);
        }
    }
    let (kind, m, e, h) = match &cfg.head {
        HeadConfig::Single(p) => (0u8, 1, p.embedding_dim, p.hidden_dim),
        HeadConfig::Mixture(mx) => (1u8, mx.num_components, mx.embedding_dim, mx.hidden_dim),
    };
    out.push(kind);
    put_u32(&mut out, to_u32(m, "num_components")?);
    put_u32(&mut out, to_u32(e, "embedding_dim")?);
    put_u32(&mut out, to_u32(h, "head_hidden_dim")?);

    let params = model.parameters();
    put_u32(&mut out, to_u32(params.len(), "tensor_count")?);
    for p in params {
        let (r, c) = p.dims2()?;
        put_u32(&mut out, to_u32(r, "rows")?);
        put_u32(&mut out, to_u32(c, "cols")?);
        put_f64s(&mut out, p.data());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let dim = |r: &mut Reader, what: &str| -> Result<usize> { Ok(r.u32(what)? as usize) };
    let input_dim = dim(&mut r, "input_dim")?;
    let hidden_count = dim(&mut r, "hidden_count")?;
    let mut hidden_dims = Vec::new();
    for _ in 0..hidden_count {
        hidden_dims.push(dim(&mut r, "hidden_dim")?);
    }
    let representation_dim = dim(&mut r, "representation_dim")?;
    let act_at = r.offset();
    let activation = Activation::from_code(r.u8("activation")?)
        .ok_or_else(|| Error::format(act_at, "unknown activation code"))?;
    let base_at = r.offset();
    let base_head = match r.u8("has_base_head")? {
        0 => None,
        1 => Some(ProjectionConfig {
            embedding_dim: dim(&mut r, "base_embedding_dim")?,
            hidden_dim: dim(&mut r, "base_hidden_dim")?,
        }),
        _ => return Err(Error::format(base_at, "has_base_head must be 0 or 1")),
    };
    let kind_at = r.offset();
    let kind = r.u8("head_kind")?;
    let m = dim(&mut r, "num_components")?;
    let embedding_dim = dim(&mut r, "embedding_dim")?;
    let hidden_dim = dim(&mut r, "head_hidden_dim")?;
    let head = match kind {
        0 => HeadConfig::Single(ProjectionConfig {
            embedding_dim,
            hidden_dim,
        }),
        1 => HeadConfig::Mixture(MixtureHeadConfig {
            num_components: m,
            embedding_dim,
            hidden_dim,
        }),
        _ => return Err(Error::format(kind_at, "head_kind must be 0 or 1")),
    };
    let config = ModelConfig {
        encoder: EncoderConfig {
            input_dim,
            hidden_dims,
            representation_dim,
            activation,
        },
        base_head,
        head,
    };
    config
        .validate()
        .map_err(|e| Error::format(kind_at, format!("invalid configuration block: {e}")))?;

    // Shapes come from a freshly laid-out model; values are overwritten below.
    let mut model = Model::init(&config, &mut crate::rng::stream(0, crate::rng::Stream::Init))?;
    let count_at = r.offset();
    let count = dim(&mut r, "tensor_count")?;
    let expected = model.parameters().len();
    if count != expected {
        return Err(Error::format(
            count_at,
            format!("configuration implies {expected} tensors, file has {count}"),
        ));
    }
    for (i, p) in model.parameters_mut().into_iter().enumerate() {
        let at = r.offset();
        let rows = dim(&mut r, "rows")?;
        let cols = dim(&mut r, "cols")?;
        if [rows, cols] != p.shape() {
            return Err(Error::format(
                at,
                format!("tensor {i} has shape [{rows}, {cols}], expected {:?}", p.shape()),
            ));
        }
        let data = r.f64s(rows * cols, "tensor data")?;
        *p = Tensor::matrix(rows, cols, data)?;
    }
    r.finish()?;
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    decode_checkpoint(&fs::read(path)?)
}
