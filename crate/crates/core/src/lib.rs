//! Code/text sequence-to-sequence pipeline at desk scale.
//!
//! The stages, in pipeline order:
//!
//! - [`codec`]: reversible rewriting of code glyphs into marker words
//! - [`corpus`]: function-record ingestion and pretraining-sequence assembly
//! - [`tokenizer`]: byte-pair-encoding vocabulary with sentinel tokens
//! - [`denoise`]: span-corruption examples
//! - [`model`]: encoder-decoder transformer on a small reverse-mode autodiff core
//! - [`trainer`]: pretraining, multi-task fine-tuning, checkpoints
//! - [`infer`]: greedy, beam and constrained-label decoding
//! - [`tasks`]: prefixed task adapters
//! - [`minilang`] and [`metrics`]: evaluation

pub mod codec;
pub mod corpus;
pub mod denoise;
pub mod error;
pub mod infer;
pub mod metrics;
pub mod minilang;
pub mod model;
pub mod tasks;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
