//! Contrastive representation learning with a mixture-of-embeddings head.
//!
//! The crate is split along the training/evaluation pipeline:
//!
//! - [`numcore`]: dense `f64` tensors with a record-then-reverse autodiff tape
//!   and a central-difference gradient checker.
//! - [`model`]: MLP encoder, single projection head and the gated mixture head,
//!   plus the `MIXEM1` checkpoint format.
//! - [`losses`]: NT-Xent contrastive loss, marginal/instance entropy terms, the
//!   associative pull/push terms and their weighted total.
//! - [`clustering`]: Lloyd's K-means with random restarts or component-mean
//!   seeding.
//! - [`metrics`]: Hungarian-matched accuracy, NMI, ARI and confusion matrices.
//! - [`harness`]: datasets, binary matrix/label files, augmentation, the
//!   training loop and evaluation.

mod binio;
pub mod clustering;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod rng;

pub use error::{Error, Result};
