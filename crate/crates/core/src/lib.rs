//! Attention-based neural machine translation with an optional
//! larger-context encoder, trained by backpropagation-through-time on a
//! small define-by-run tape, plus the evaluation stack used to study it:
//! corpus BLEU, RIBES, and cross-lingual pronoun prediction scored by
//! macro-averaged recall.
//!
//! The runnable programs under `examples/` walk through each capability;
//! the `lcnmt` binary exposes the same pieces as subcommands.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod decoding;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod pronoun;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{Mode, Model, ModelConfig};
pub use tape::{Gradients, ParamId, ParamStore, Tape, Var};
pub use tensor::Tensor;

/// Random stream used for initialisation, dropout and shuffling.
pub type SeededRng = rand_chacha::ChaCha8Rng;
