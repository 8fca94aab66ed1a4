//! Condition-revising transformer for conversational answer selection.
//!
//! The crate is organised bottom-up:
//!
//! - [`autograd`]: dense `f64` tensors and a reverse-mode tape.
//! - [`nn`]: attention, feed-forward, encoder and reviser layers.
//! - [`model`]: the conditions encoder, dialogue encoder, conditions
//!   reviser and classifier, the joint loss and checkpoints.
//! - [`data`]: the condition schema and a synthetic dialogue generator with
//!   controlled condition corruption.
//! - [`train`]: optimiser, training loop, metrics and the
//!   revise-vs-no-revise ablation.

pub mod autograd;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod nn;
pub mod train;

pub use autograd::{Graph, ParamId, ParamSet, Tensor, Var};
pub use error::{Error, Result};
