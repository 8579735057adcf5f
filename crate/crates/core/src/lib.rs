//! Missing-aware multimodal survival modelling.
//!
//! The crate covers everything downstream of feature extraction: cohort
//! ingestion and synthesis, masked-attention unimodal encoders, oblivious
//! differentiable tree heads, Cox partial-likelihood training, fusion
//! strategies and censoring-aware evaluation.

pub mod cohort;
pub mod diffcore;
pub mod encoder;
pub mod fusion;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod odst;
pub mod params;
pub mod survloss;
pub mod trainer;

pub use error::{Error, Result};
