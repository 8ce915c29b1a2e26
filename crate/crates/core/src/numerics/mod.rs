//! Dense `f64` tensors and a tape-based reverse-mode autodiff engine.

mod tape;
mod tensor;

use thiserror::Error;

pub use tape::{sigmoid, softplus, SegmentMode, Tape, Var};
pub use tensor::Tensor;

/// Added to each norm in cosine similarity so zero vectors do not divide by zero.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("tensor of shape {rows}x{cols} cannot hold {len} values")]
    Length {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("{op}: entry {index} = {value} is outside the domain")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{op}: index {index} at position {position} out of range (bound {bound})")]
    Index {
        op: &'static str,
        position: usize,
        index: usize,
        bound: usize,
    },
    #[error("{op}: degenerate input: {reason}")]
    Degenerate { op: &'static str, reason: String },
    #[error("{0}")]
    Usage(String),
}

impl Tape {
    /// Differentiable cosine similarity of two equally shaped vectors, with
    /// [`COSINE_EPS`] added to each norm.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.cosine(a, b, false)
    }

    /// Like [`Tape::cosine_similarity`] but rejects zero-norm inputs.
    pub fn cosine_similarity_strict(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.cosine(a, b, true)
    }

    fn cosine(&mut self, a: Var, b: Var, strict: bool) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb || (sa.0 != 1 && sa.1 != 1) {
            return Err(TensorError::Dimension {
                op: "cosine_similarity",
                left: sa,
                right: sb,
            });
        }
        if strict {
            for v in [a, b] {
                if self.value(v).data().iter().all(|&x| x == 0.0) {
                    return Err(TensorError::Degenerate {
                        op: "cosine_similarity",
                        reason: "zero-norm vector".into(),
                    });
                }
            }
        }
        let (a, b) = if sa.0 != 1 {
            (self.transpose(a), self.transpose(b))
        } else {
            (a, b)
        };
        let eps = if strict { 0.0 } else { COSINE_EPS };
        let na = self.normalize_rows(a, eps);
        let nb = self.normalize_rows(b, eps);
        let prod = self.mul(na, nb)?;
        Ok(self.sum(prod))
    }
}

/// Plain cosine similarity with [`COSINE_EPS`]-padded norms.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / ((na + COSINE_EPS) * (nb + COSINE_EPS))
}
