//! Fixed-architecture feed-forward network: affine layers with rectifiers in
//! between and an identity output, plus hand-derived reverse-mode gradients.
//!
//! Weights are stored input-major (`in_dim x out_dim`) so a batch forward is
//! `Y = X W + b` with `X` holding one sample per row.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{dot, Matrix};
use crate::error::{contract, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Shape `in_dim x out_dim`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { weight: Matrix::zeros(in_dim, out_dim), bias: vec![0.0; out_dim] }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Per-layer values kept by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer (post-rectifier for all but the first).
    inputs: Vec<Matrix>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Matrix>,
}

impl MlpCache {
    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }
}

impl MlpParams {
    /// All-zero network with the given layer widths, e.g. `[in, h, h, out]`.
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "need at least one layer");
        Self { layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect() }
    }

    /// Fan-in scaled uniform weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
    pub fn init_uniform<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let mut p = Self::zeros(dims);
        for layer in &mut p.layers {
            let bound = 1.0 / (layer.in_dim() as f64).sqrt();
            for w in layer.weight.data_mut() {
                *w = rng.random_range(-bound..bound);
            }
        }
        p
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Layer::out_dim));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data().len() + l.bias.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(contract("network has no layers"));
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(contract(format!("layer {i} output does not chain into layer {}", i + 1)));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(contract(format!("layer {i} bias length mismatch")));
            }
        }
        Ok(())
    }

    /// Flat views of every tensor, weights then bias per layer.
    pub fn buffers(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weight.data(), l.bias.as_slice()]).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let Layer { weight, bias } = l;
                [weight.data_mut(), bias.as_mut_slice()]
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.buffers().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.dims() == other.dims()
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
        let (y, cache) = self.forward_batch(&x)?;
        Ok((y.data().to_vec(), cache))
    }

    /// Forward pass over a batch with one sample per row.
    pub fn forward_batch(&self, input: &Matrix) -> Result<(Matrix, MlpCache)> {
        if input.cols() != self.input_dim() {
            return Err(contract(format!(
                "network expects input width {}, got {}",
                self.input_dim(),
                input.cols()
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = x.matmul(&layer.weight);
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            inputs.push(x);
            if i == last {
                return Ok((z, MlpCache { inputs, pre }));
            }
            let mut a = z.clone();
            a.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            pre.push(z);
            x = a;
        }
        unreachable!("network has at least one layer")
    }

    /// Output only, no cache.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        self.forward_batch(input).map(|(y, _)| y)
    }

    /// Gradients of a scalar loss w.r.t. all parameters (summed over the
    /// batch) and w.r.t. the input, given `dL/dY`.
    pub fn backward(&self, cache: &MlpCache, output_grad: &Matrix) -> Result<(MlpParams, Matrix)> {
        self.check_cache(cache, output_grad)?;
        let mut grads = MlpParams::zeros(&self.dims());
        let mut delta = output_grad.clone();
        for i in (0..self.layers.len()).rev() {
            let x = &cache.inputs[i];
            let g = &mut grads.layers[i];
            for s in 0..x.rows() {
                let d_row = delta.row(s);
                for (gb, d) in g.bias.iter_mut().zip(d_row) {
                    *gb += d;
                }
                for (k, xv) in x.row(s).iter().enumerate() {
                    if *xv == 0.0 {
                        continue;
                    }
                    for (gw, d) in g.weight.row_mut(k).iter_mut().zip(d_row) {
                        *gw += xv * d;
                    }
                }
            }
            delta = self.propagate(i, &delta, cache);
        }
        Ok((grads, delta))
    }

    /// Gradient w.r.t. the input only; skips parameter gradients.
    pub fn backward_input(&self, cache: &MlpCache, output_grad: &Matrix) -> Result<Matrix> {
        self.check_cache(cache, output_grad)?;
        let mut delta = output_grad.clone();
        for i in (0..self.layers.len()).rev() {
            delta = self.propagate(i, &delta, cache);
        }
        Ok(delta)
    }

    /// Pushes `delta` (gradient at layer `i` output, pre-activation) to the
    /// layer input and through the preceding rectifier.
    fn propagate(&self, i: usize, delta: &Matrix, cache: &MlpCache) -> Matrix {
        let w = &self.layers[i].weight;
        let mut dx = Matrix::zeros(delta.rows(), w.rows());
        for s in 0..delta.rows() {
            let d_row = delta.row(s);
            for (k, out) in dx.row_mut(s).iter_mut().enumerate() {
                *out = dot(d_row, w.row(k));
            }
        }
        if i > 0 {
            // Rectifier derivative is taken as 0 at exactly 0.
            for (g, z) in dx.data_mut().iter_mut().zip(cache.pre[i - 1].data()) {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        dx
    }

    fn check_cache(&self, cache: &MlpCache, output_grad: &Matrix) -> Result<()> {
        if cache.inputs.len() != self.layers.len() {
            return Err(contract("cache was produced by a different network"));
        }
        let batch = cache.inputs[0].rows();
        if output_grad.rows() != batch || output_grad.cols() != self.output_dim() {
            return Err(contract(format!(
                "output gradient is {}x{}, expected {}x{}",
                output_grad.rows(),
                output_grad.cols(),
                batch,
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// `self <- (1 - tau) self + tau source`.
    pub fn polyak_from(&mut self, source: &MlpParams, tau: f64) {
        for (dst, src) in self.buffers_mut().into_iter().zip(source.buffers()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += tau * (s - *d);
            }
        }
    }

    /// Sum of absolute entry-wise differences.
    pub fn l1_distance(&self, other: &MlpParams) -> f64 {
        self.buffers()
            .iter()
            .zip(other.buffers())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .sum()
    }

    /// Multiplies the last layer's weights and bias by `s`.
    pub fn scale_output_layer(&mut self, s: f64) {
        if let Some(l) = self.layers.last_mut() {
            l.weight.data_mut().iter_mut().for_each(|w| *w *= s);
            l.bias.iter_mut().for_each(|b| *b *= s);
        }
    }
}
