//! Minimal dense-tensor reverse-mode autodiff.
//!
//! Graphs are built by running code against a [`Tape`]: every op evaluates
//! eagerly, caches its output, and records its inputs so [`Tape::backward`]
//! can walk the nodes in reverse. Parameters live in a [`ParamStore`] that
//! the tape borrows; gradients come back as a [`Gradients`] value aligned
//! with the store.

mod adam;
mod checkpoint;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_params, read_params, save_params, write_params, CHECKPOINT_VERSION};
pub use gradcheck::gradient_check;
pub use params::{Gradients, ParamId, ParamStore};
pub(crate) use tape::{matmul_into, softmax_row};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("backward called before forward: {0}")]
    BackwardBeforeForward(String),
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("parameter `{name}` has shape {expected:?} but the update has {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}
