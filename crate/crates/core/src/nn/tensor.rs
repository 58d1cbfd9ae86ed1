use alloc::vec;
use alloc::vec::Vec;

use super::NnError;

/// A dense parameter array with a same-shape gradient accumulator.
///
/// Shapes are at most rank 2; vectors use `cols == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            values: vec![0.0; rows * cols],
            grad: vec![0.0; rows * cols],
        }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols);
        let grad = vec![0.0; values.len()];
        Tensor {
            rows,
            cols,
            values,
            grad,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

/// Handle to a tensor inside a [`Params`] arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Arena holding every learnable tensor of a model.
///
/// Models store [`ParamId`] handles; the optimizer and finite-difference
/// checks iterate the arena directly so parameter order is fixed and
/// reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    tensors: Vec<Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn alloc(&mut self, t: Tensor) -> ParamId {
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            for g in &mut t.grad {
                *g = 0.0;
            }
        }
    }

    /// Scale all accumulated gradients, e.g. to turn sums into batch means.
    pub fn scale_grads(&mut self, s: f64) {
        for t in &mut self.tensors {
            for g in &mut t.grad {
                *g *= s;
            }
        }
    }

    pub fn check_finite_grads(&self) -> Result<(), NnError> {
        for (ti, t) in self.tensors.iter().enumerate() {
            for (i, g) in t.grad.iter().enumerate() {
                if !g.is_finite() {
                    return Err(NnError::NonFiniteGradient {
                        tensor: ti,
                        index: i,
                    });
                }
            }
        }
        Ok(())
    }

    /// Copy of all parameter values, for checkpointing / best-epoch snapshots.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| t.values.clone()).collect()
    }

    pub fn restore(&mut self, snap: &[Vec<f64>]) {
        assert_eq!(snap.len(), self.tensors.len());
        for (t, s) in self.tensors.iter_mut().zip(snap) {
            t.values.copy_from_slice(s);
        }
    }
}
