//! Contextuality test through minimum-error discrimination of two qubit
//! states: exact predictions, a noisy experiment simulator, and the
//! two-stage (GPT fit, then operational equivalence) analysis.

pub mod analysis;
pub mod cli;
pub mod equiv;
pub mod error;
mod qp;
pub mod qubit;
pub mod sim;
pub mod tomo;

pub use error::{Error, Result};
