//! Miniature attention-based neural machine translation with knowledge-guided
//! training.
//!
//! The crate trains a small bidirectional-GRU encoder / attention decoder
//! translation model two ways: plain maximum likelihood, and jointly with a
//! KL-divergence term that pulls the model posterior toward a log-linear
//! "desired" distribution over sampled candidate translations. The log-linear
//! side scores candidates with sparse prior-knowledge features (bilingual
//! dictionary, phrase table, attention coverage, length ratio). Inference
//! supports beam search, coverage-penalty rescoring, and feature-based k-best
//! reranking, evaluated with corpus BLEU.
//!
//! All floating-point work is `f64`, all randomness flows from explicit seeds,
//! and every entry point is deterministic: identical inputs and seeds produce
//! bit-identical outputs regardless of whether the `parallel` feature is
//! enabled.

pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod features;
pub mod linalg;
pub mod model;
pub mod par;
pub mod posreg;
pub mod rng;

pub use error::{Error, Result};
