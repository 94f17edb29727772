//! Fully connected nets with exact analytic backprop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::SimRng;
use crate::error::{Result, SimError};

use super::Parameterized;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed in terms of the activation output.
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Activation::Identity => "id",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sig",
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One dense layer: `y = act(W x + b)`, weights stored row-major `out x in`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub act: Activation,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl DenseLayer {
    /// Fan-in scaled uniform init, zero biases.
    pub fn new(in_dim: usize, out_dim: usize, act: Activation, rng: &mut SimRng) -> Self {
        let scale = 1.0 / (in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim).map(|_| rng.gen_range(-scale..scale)).collect();
        Self { in_dim, out_dim, act, w, b: vec![0.0; out_dim] }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, act: Activation) -> Self {
        Self { in_dim, out_dim, act, w: vec![0.0; in_dim * out_dim], b: vec![0.0; out_dim] }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.out_dim);
        for row in 0..self.out_dim {
            let mut z = self.b[row];
            let base = row * self.in_dim;
            for (col, xv) in x.iter().enumerate() {
                z += self.w[base + col] * xv;
            }
            out.push(self.act.apply(z));
        }
        out
    }

    /// Backprop one layer. `y` is the cached layer output for input `x`,
    /// `upstream` is dL/dy; returns (dL/dW, dL/db, dL/dx).
    pub fn backward(
        &self,
        x: &[f64],
        y: &[f64],
        upstream: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut dw = vec![0.0; self.w.len()];
        let mut db = vec![0.0; self.out_dim];
        let mut dx = vec![0.0; self.in_dim];
        for row in 0..self.out_dim {
            let delta = upstream[row] * self.act.grad_from_output(y[row]);
            db[row] = delta;
            let base = row * self.in_dim;
            for col in 0..self.in_dim {
                dw[base + col] = delta * x[col];
                dx[col] += delta * self.w[base + col];
            }
        }
        (dw, db, dx)
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<DenseLayer>,
}

/// Per-layer activations cached by [`DenseNet::forward_cached`];
/// `acts[0]` is the input, `acts[i]` the output of layer `i-1`.
#[derive(Debug, Clone)]
pub struct DenseCache {
    pub acts: Vec<Vec<f64>>,
}

impl DenseNet {
    /// `dims` chains layer sizes: `[in, h1, ..., out]`; `acts` has one entry
    /// per layer.
    pub fn new(dims: &[usize], acts: &[Activation], rng: &mut SimRng) -> Result<Self> {
        Self::build(dims, acts, |i, o, a| DenseLayer::new(i, o, a, rng))
    }

    pub fn zeros(dims: &[usize], acts: &[Activation]) -> Result<Self> {
        Self::build(dims, acts, DenseLayer::zeros)
    }

    fn build(
        dims: &[usize],
        acts: &[Activation],
        mut make: impl FnMut(usize, usize, Activation) -> DenseLayer,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(SimError::Config("dense net needs at least one layer".into()));
        }
        if acts.len() != dims.len() - 1 {
            return Err(SimError::Config(format!(
                "expected {} activations, got {}",
                dims.len() - 1,
                acts.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(SimError::Config("zero-width dense layer".into()));
        }
        let layers = dims
            .windows(2)
            .zip(acts)
            .map(|(pair, &act)| make(pair[0], pair[1], act))
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.act).collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for layer in &self.layers {
            cur = layer.forward(&cur);
        }
        Ok(cur)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let next = layer.forward(acts.last().unwrap());
            acts.push(next);
        }
        let out = acts.last().unwrap().clone();
        Ok((out, DenseCache { acts }))
    }

    /// Exact gradients of the cached forward pass. Returns the flat parameter
    /// gradient (aligned with [`Parameterized::params`]) and dL/dx.
    pub fn backward(&self, cache: &DenseCache, upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(upstream.len(), self.output_dim(), "upstream gradient shape");
        let mut layer_grads = vec![(Vec::new(), Vec::new()); self.layers.len()];
        let mut delta = upstream.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.acts[idx];
            let y = &cache.acts[idx + 1];
            let (dw, db, dx) = layer.backward(x, y, &delta);
            layer_grads[idx] = (dw, db);
            delta = dx;
        }
        let mut flat = Vec::with_capacity(self.param_count());
        for (dw, db) in layer_grads {
            flat.extend(dw);
            flat.extend(db);
        }
        (flat, delta)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(SimError::DimMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }
}

impl Parameterized for DenseNet {
    fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.w);
            out.extend_from_slice(&layer.b);
        }
        out
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(SimError::DimMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let wn = layer.w.len();
            layer.w.copy_from_slice(&params[offset..offset + wn]);
            offset += wn;
            let bn = layer.b.len();
            layer.b.copy_from_slice(&params[offset..offset + bn]);
            offset += bn;
        }
        Ok(())
    }

    fn arch_signature(&self) -> String {
        let parts: Vec<String> = self
            .layers
            .iter()
            .map(|l| format!("{}x{}{}", l.in_dim, l.out_dim, l.act.tag()))
            .collect();
        format!("dense:{}", parts.join(","))
    }
}
