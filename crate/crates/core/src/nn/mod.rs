//! Minimal deterministic neural-network engine: parameter storage, dense and
//! embedding layers with explicit forward traces and reverse-mode gradient
//! accumulation, the pointwise probability ops (softmax, cross-entropy, KL),
//! dropout, gradient reversal and the Adam optimizer.

mod adam;
mod graph;
mod ops;
mod tensor;

pub use adam::Adam;
pub use graph::{Embedding, Linear, Mlp, MlpTrace};
pub use ops::{
    cross_entropy, cross_entropy_grad, dropout, dropout_mask, gradient_reversal_backward,
    gradient_reversal_forward, kl_divergence, kl_divergence_grad_p, kl_divergence_grad_q,
    relu, relu_grad, softmax2, softmax2_backward, PROB_EPS,
};
pub use tensor::{ParamId, Params, Tensor};

use core::fmt;

/// Errors raised by the engine.
#[derive(Debug, Clone, PartialEq)]
pub enum NnError {
    /// Layer dimensions do not compose, or an input has the wrong width.
    DimensionMismatch { expected: usize, got: usize },
    /// Dropout rate outside [0, 1).
    InvalidDropoutRate(f64),
    /// A gradient became non-finite; the run must abort.
    NonFiniteGradient { tensor: usize, index: usize },
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            NnError::InvalidDropoutRate(r) => write!(f, "dropout rate {r} not in [0, 1)"),
            NnError::NonFiniteGradient { tensor, index } => {
                write!(f, "non-finite gradient in tensor {tensor} at index {index}")
            }
        }
    }
}
