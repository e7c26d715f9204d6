//! Calibration-aware post-training compression for small byte-level language models.
//!
//! The crate is organised bottom-up:
//!
//! * [`corpus`] loads per-language corpora and cuts deterministic token segments.
//! * [`sampler`] allocates calibration segments across languages (proportional,
//!   equal or monolingual) and materializes them.
//! * [`model`] holds the k-gram MLP language model, its trainer, binary
//!   checkpoint format, per-layer input capture and perplexity.
//! * [`hessian`] accumulates `X·Xᵀ` proxies per layer and per language and
//!   inverts them through a dampened Cholesky factorization.
//! * [`prune`] and [`quantize`] implement magnitude/Wanda/SparseGPT-style
//!   pruning and RTN/GPTQ-style quantization of a single linear layer.
//! * [`similarity`] turns embedding-output activation norms into angular
//!   distances between languages and a classical MDS embedding.
//! * [`eval`] drives whole-model compression and per-language perplexity reports.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod hessian;
pub mod linalg;
pub mod model;
mod par;
pub mod prune;
pub mod quantize;
pub mod rng;
pub mod sampler;
pub mod similarity;

pub use error::{MbsError, Result};
