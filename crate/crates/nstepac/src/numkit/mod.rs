//! Dense-tensor math for the agents: row-major matrices, MLP
//! forward/backward passes, Adam, and Polyak interpolation.
//!
//! Everything is `f64` and value-semantic. No operation keeps hidden
//! mutable state, so distinct networks can be driven from distinct
//! threads without locking.

mod adam;
mod matrix;
mod mlp;
mod snapshot;

pub use adam::{adam_step, AdamState};
pub use matrix::Matrix;
pub use mlp::{
    mlp_backward, mlp_forward, soft_update, Activation, ForwardCache, Gradients, MlpParams,
    OutputActivation,
};
pub use snapshot::{read_snapshot, write_snapshot};

use thiserror::Error;

/// Errors raised by the numeric kernel.
#[derive(Debug, Error)]
pub enum NumKitError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("forward cache is stale or belongs to a different network")]
    StaleCache,
    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<(), NumKitError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumKitError::NonFinite(what))
    }
}
