//! Reverse-mode gradients and the two-headed perceptron used by every model.
//!
//! Two gradient routes live here. [`tape`] is a general scalar tape, useful for
//! small objectives and as an independent check. [`mlp::GradTape`] records
//! whole layer activations and backpropagates with dense loops; training uses
//! it exclusively.

pub mod adam;
mod fdcheck;
pub mod mlp;
pub mod tape;

use thiserror::Error;

pub use adam::{Adam, ExpDecay};
pub use fdcheck::{fd_check, FdReport};
pub use mlp::{mlp_forward, mlp_forward_tape, mlp_forward_unchecked, GradTape, MlpOutput, NetArch, ParamVector};
pub use tape::{grad, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("{what}: expected length {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error("parameter {0} is not finite")]
    NonFiniteParam(usize),
    #[error("non-finite value at node {node} ({op})")]
    NonFinite { node: usize, op: String },
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}
