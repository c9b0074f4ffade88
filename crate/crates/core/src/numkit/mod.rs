//! Numeric core: dense and CSR storage, reverse-mode autodiff, Adam, and the
//! binary checkpoint format.

mod adam;
pub mod checkpoint;
mod csr;
pub mod kernels;
mod ops;
mod rng;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use csr::CsrMatrix;
pub use ops::{log_softmax_rows_data, sigmoid, softmax_rows, softmax_rows_data, SparseOperand};
pub use rng::Rng;
pub use tape::{Backward, Gradients, ParamId, ParamStore, Tape, Var};
pub use tensor::Tensor;

use std::sync::Arc;

/// Input to a first layer: either a recorded dense value or a constant sparse matrix.
#[derive(Clone)]
pub enum Input {
    Dense(Var),
    Sparse(Arc<SparseOperand>),
}

impl Input {
    pub fn rows(&self, tape: &Tape) -> usize {
        match self {
            Input::Dense(v) => tape.shape(*v)[0],
            Input::Sparse(s) => s.matrix.n_rows(),
        }
    }

    pub fn cols(&self, tape: &Tape) -> usize {
        match self {
            Input::Dense(v) => tape.shape(*v)[1],
            Input::Sparse(s) => s.matrix.n_cols(),
        }
    }

    /// Product with a weight `[cols × n]`.
    pub fn matmul(&self, tape: &mut Tape, w: Var) -> crate::Result<Var> {
        match self {
            Input::Dense(v) => tape.matmul(*v, w),
            Input::Sparse(s) => tape.spmm(s, w),
        }
    }

    /// Materialises the input as a dense recorded value.
    pub fn to_dense(&self, tape: &mut Tape) -> Var {
        match self {
            Input::Dense(v) => *v,
            Input::Sparse(s) => tape.constant(s.matrix.to_dense()),
        }
    }

    /// Inverted dropout: zeroes entries with probability `p`, scales the rest
    /// by `1/(1-p)`. Sparse inputs draw one decision per stored entry.
    pub fn dropout(&self, tape: &mut Tape, p: f32, rng: &mut Rng) -> crate::Result<Input> {
        if p <= 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - p);
        match self {
            Input::Dense(v) => {
                let mask: Vec<f32> = (0..tape.value(*v).len())
                    .map(|_| if rng.bernoulli(p) { 0.0 } else { keep })
                    .collect();
                Ok(Input::Dense(tape.mul_const(*v, Arc::new(mask))?))
            }
            Input::Sparse(s) => {
                let values = s
                    .matrix
                    .values()
                    .iter()
                    .map(|&x| if rng.bernoulli(p) { 0.0 } else { x * keep })
                    .collect();
                Ok(Input::Sparse(SparseOperand::new(s.matrix.with_values(values))))
            }
        }
    }
}
