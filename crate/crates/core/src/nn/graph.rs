use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::fmath;
use crate::rng::Rng;

use super::ops::{relu, relu_grad};
use super::tensor::{ParamId, Params, Tensor};
use super::NnError;

/// Dense layer y = W x + b.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Weights uniform in +-1/sqrt(in_dim), biases zero.
    pub fn new(params: &mut Params, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let scale = 1.0 / fmath::sqrt(in_dim as f64);
        let values = (0..out_dim * in_dim)
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        let w = params.alloc(Tensor::from_values(out_dim, in_dim, values));
        let b = params.alloc(Tensor::zeros(out_dim, 1));
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, params: &Params, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let w = params.get(self.w);
        let b = params.get(self.b);
        let mut y = Vec::with_capacity(self.out_dim);
        for r in 0..self.out_dim {
            let row = &w.values[r * self.in_dim..(r + 1) * self.in_dim];
            let mut acc = b.values[r];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            y.push(acc);
        }
        y
    }

    /// Accumulate dW, db and return dx. `x` must be the forward input.
    pub fn backward(&self, params: &mut Params, x: &[f64], dy: &[f64]) -> Vec<f64> {
        debug_assert_eq!(dy.len(), self.out_dim);
        let mut dx = vec![0.0; self.in_dim];
        {
            let w = params.get_mut(self.w);
            for r in 0..self.out_dim {
                let g = dy[r];
                let row = r * self.in_dim;
                for c in 0..self.in_dim {
                    w.grad[row + c] += g * x[c];
                    dx[c] += w.values[row + c] * g;
                }
            }
        }
        let b = params.get_mut(self.b);
        for r in 0..self.out_dim {
            b.grad[r] += dy[r];
        }
        dx
    }
}

/// Stack of dense layers with ReLU on every layer except (optionally) the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// ReLU after the final layer too; used for representation learners
    /// whose output feeds further dense layers.
    pub relu_last: bool,
}

/// Per-layer inputs and pre-activations recorded during a forward pass;
/// sufficient to run the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    /// inputs[i] is the input vector fed to layer i.
    pub inputs: Vec<Vec<f64>>,
    /// pre[i] is the pre-activation output of layer i.
    pub pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// `widths` are the output sizes of each layer, e.g. [32, 16, 2].
    pub fn new(
        params: &mut Params,
        in_dim: usize,
        widths: &[usize],
        rng: &mut Rng,
    ) -> Result<Self, NnError> {
        Mlp::new_with(params, in_dim, widths, false, rng)
    }

    /// As [`Mlp::new`], with control over ReLU after the final layer.
    pub fn new_with(
        params: &mut Params,
        in_dim: usize,
        widths: &[usize],
        relu_last: bool,
        rng: &mut Rng,
    ) -> Result<Self, NnError> {
        if widths.is_empty() {
            return Err(NnError::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut d = in_dim;
        for &w in widths {
            layers.push(Linear::new(params, d, w, rng));
            d = w;
        }
        Ok(Mlp { layers, relu_last })
    }

    #[inline]
    fn relu_at(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.relu_last
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    /// Forward with trace; ReLU after every layer but the last.
    pub fn forward(&self, params: &Params, x: &[f64]) -> (Vec<f64>, MlpTrace) {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(params, &cur);
            inputs.push(cur);
            let next = if self.relu_at(i) {
                z.iter().map(|&v| relu(v)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            cur = next;
        }
        (cur, MlpTrace { inputs, pre })
    }

    /// Forward without keeping a trace.
    pub fn infer(&self, params: &Params, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(params, &cur);
            cur = if self.relu_at(i) {
                z.iter().map(|&v| relu(v)).collect()
            } else {
                z
            };
        }
        cur
    }

    /// Backward from dL/d(output); accumulates parameter grads, returns dL/dx.
    pub fn backward(&self, params: &mut Params, trace: &MlpTrace, dout: &[f64]) -> Vec<f64> {
        let n = self.layers.len();
        let mut d = dout.to_vec();
        for i in (0..n).rev() {
            if self.relu_at(i) {
                for (dj, &z) in d.iter_mut().zip(&trace.pre[i]) {
                    *dj *= relu_grad(z);
                }
            }
            d = self.layers[i].backward(params, &trace.inputs[i], &d);
        }
        d
    }
}

/// Embedding table over categorical fields; lookup concatenates one
/// `dim`-sized row per field.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub dim: usize,
    /// Row offset of each field's first category.
    pub offsets: Vec<usize>,
    pub cardinalities: Vec<usize>,
}

impl Embedding {
    /// Entries uniform in [-0.05, 0.05].
    pub fn new(params: &mut Params, cardinalities: &[usize], dim: usize, rng: &mut Rng) -> Self {
        let mut offsets = Vec::with_capacity(cardinalities.len());
        let mut total = 0usize;
        for &c in cardinalities {
            offsets.push(total);
            total += c;
        }
        let values = (0..total * dim).map(|_| rng.gen_range(-0.05..0.05)).collect();
        let table = params.alloc(Tensor::from_values(total, dim, values));
        Embedding {
            table,
            dim,
            offsets,
            cardinalities: cardinalities.to_vec(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.offsets.len() * self.dim
    }

    /// `features[f]` is the category id of field f.
    pub fn lookup(&self, params: &Params, features: &[u32]) -> Vec<f64> {
        debug_assert_eq!(features.len(), self.offsets.len());
        let t = params.get(self.table);
        let mut out = Vec::with_capacity(self.out_dim());
        for (f, &cat) in features.iter().enumerate() {
            let row = self.offsets[f] + cat as usize;
            out.extend_from_slice(&t.values[row * self.dim..(row + 1) * self.dim]);
        }
        out
    }

    /// Scatter dL/d(lookup output) back into the table gradient.
    pub fn backward(&self, params: &mut Params, features: &[u32], dout: &[f64]) {
        debug_assert_eq!(dout.len(), self.out_dim());
        let t = params.get_mut(self.table);
        for (f, &cat) in features.iter().enumerate() {
            let row = self.offsets[f] + cat as usize;
            let dst = &mut t.grad[row * self.dim..(row + 1) * self.dim];
            let src = &dout[f * self.dim..(f + 1) * self.dim];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}
