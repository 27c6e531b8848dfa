//! Desk-scale CT report generation: a recurrent vision-transformer
//! encoder over slice stacks, three attention poolings that build
//! multi-level soft prompts, and a small autoregressive decoder, all on
//! a deterministic f64 tape with a finite-difference gradient oracle.

pub mod decoder;
pub mod error;
pub mod attention;
pub mod encoder;
pub mod harness;
pub(crate) mod init;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod text;
pub mod volume;

pub use error::{Result, SctgError};
