//! Deep supervised hashing with a hybrid convolution / block self-attention
//! backbone.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors with a reverse-mode gradient tape.
//! * [`nn`]: layers (layer norm, multi-head attention, GELU MLP) and the
//!   parameter store.
//! * [`optim`]: RMSProp with decoupled weight decay.
//! * [`model`]: patch embedding, block aggregation, encoder stages,
//!   interaction modules and the tanh hash head, plus checkpoints.
//! * [`loss`]: the weighted maximum-likelihood pairwise objective.
//! * [`retrieval`]: bit-packed codes, Hamming ranking and MAP@k.
//! * [`data`]: the `HHDS` dataset container, augmentation, pair-batch
//!   sampling and a synthetic dataset generator.
//! * [`config`] and [`pipeline`]: run configuration and the train / encode /
//!   eval / gradcheck commands.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

mod binio;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod nn;
pub mod optim;
mod parallel;
pub mod pipeline;
pub mod retrieval;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tape, Tensor, Var};
