//! Dense multilayer perceptrons with hand-written backpropagation and Adam.
//!
//! A [`DenseNet`] is a stack of affine layers, each followed by an element-wise
//! activation:
//!
//! - `z = W x + b`
//! - `y = activation(z)`
//!
//! Weights are stored row-major with shape `(out, in)`. Everything is `f64`.

use std::io::{BufRead, Write};

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },
    #[error("snapshot i/o: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major, `out_dim × in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    fn weight(&self, o: usize, i: usize) -> f64 {
        self.weights[o * self.in_dim + i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

/// Per-layer values recorded by [`DenseNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input to layer `l`; the final entry is the network output.
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("cache always holds the output")
    }
}

/// Batched counterpart of [`ForwardCache`].
#[derive(Debug, Clone)]
pub struct BatchCache {
    acts: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl BatchCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("cache always holds the output")
    }
}

/// Gradients shaped like a [`DenseNet`]: one weight and one bias tensor per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientBundle {
    pub fn zeros_like(net: &DenseNet) -> Self {
        GradientBundle {
            weights: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&g| g == 0.0))
    }

    /// Tensors in the same order as [`DenseNet::params_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales in place so the global L2 norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            let scale = max_norm / norm;
            for t in self.tensors_mut() {
                t.iter_mut().for_each(|g| *g *= scale);
            }
        }
        norm
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &GradientBundle) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }
}

impl DenseNet {
    /// Builds a network for `signature` (input size first, output size last).
    ///
    /// Hidden layers use `hidden`; the final layer is linear. Weights are drawn
    /// from `Uniform(-sqrt(6 / fan_in), sqrt(6 / fan_in))` and biases start at zero.
    pub fn new(signature: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        if signature.len() < 2 {
            return Err(NnError::InvalidConfig(format!(
                "signature needs at least 2 entries, got {}",
                signature.len()
            )));
        }
        if signature.contains(&0) {
            return Err(NnError::InvalidConfig(format!(
                "layer sizes must be positive: {signature:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = signature.len() - 1;
        let layers = signature
            .windows(2)
            .enumerate()
            .map(|(idx, pair)| {
                let (in_dim, out_dim) = (pair[0], pair[1]);
                let limit = (6.0 / in_dim as f64).sqrt();
                let weights = (0..in_dim * out_dim)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                Dense {
                    in_dim,
                    out_dim,
                    weights,
                    bias: vec![0.0; out_dim],
                    activation: if idx + 1 == n_layers {
                        Activation::Linear
                    } else {
                        hidden
                    },
                }
            })
            .collect();
        Ok(DenseNet { layers })
    }

    /// Assembles a network from explicit layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NnError::InvalidConfig("no layers".into()));
        }
        for (idx, l) in layers.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(NnError::InvalidConfig(format!(
                    "layer {idx} has a zero dimension"
                )));
            }
            if l.weights.len() != l.in_dim * l.out_dim {
                return Err(NnError::Shape {
                    expected: l.in_dim * l.out_dim,
                    got: l.weights.len(),
                });
            }
            if l.bias.len() != l.out_dim {
                return Err(NnError::Shape {
                    expected: l.out_dim,
                    got: l.bias.len(),
                });
            }
            if l.weights.iter().chain(&l.bias).any(|x| !x.is_finite()) {
                return Err(NnError::NonFinite { layer: idx });
            }
        }
        for (idx, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NnError::InvalidConfig(format!(
                    "layer {idx} outputs {} but layer {} expects {}",
                    pair[0].out_dim,
                    idx + 1,
                    pair[1].in_dim
                )));
            }
        }
        Ok(DenseNet { layers })
    }

    /// Multiplies the final layer's weights by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        if let Some(last) = self.layers.last_mut() {
            last.weights.iter_mut().for_each(|w| *w *= factor);
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn signature(&self) -> Vec<usize> {
        let mut sig = vec![self.layers[0].in_dim];
        sig.extend(self.layers.iter().map(|l| l.out_dim));
        sig
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameter tensors in order `[W0, b0, W1, b1, ...]`.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.input_dim() {
            return Err(NnError::Shape {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(NnError::NonFinite { layer: 0 });
        }
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        inputs.push(input.to_vec());
        for layer in &self.layers {
            let x = inputs.last().expect("non-empty");
            let z: Vec<f64> = (0..layer.out_dim)
                .map(|o| {
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + layer.bias[o]
                })
                .collect();
            let y = z.iter().map(|&zi| layer.activation.apply(zi)).collect();
            pre_activations.push(z);
            inputs.push(y);
        }
        Ok(ForwardCache {
            inputs,
            pre_activations,
        })
    }

    /// Convenience wrapper returning only the output.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input).map(|c| c.output().to_vec())
    }

    /// Gradients of `output · upstream` with respect to every parameter and the input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
    ) -> Result<(GradientBundle, Vec<f64>)> {
        if cache.pre_activations.len() != self.layers.len() {
            return Err(NnError::Shape {
                expected: self.layers.len(),
                got: cache.pre_activations.len(),
            });
        }
        if upstream.len() != self.output_dim() {
            return Err(NnError::Shape {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if upstream.iter().any(|x| !x.is_finite()) {
            return Err(NnError::NonFinite {
                layer: self.layers.len() - 1,
            });
        }
        let mut grads = GradientBundle::zeros_like(self);
        let mut delta_out = upstream.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre_activations[idx];
            let x = &cache.inputs[idx];
            let y = &cache.inputs[idx + 1];
            if z.len() != layer.out_dim || x.len() != layer.in_dim {
                return Err(NnError::Shape {
                    expected: layer.out_dim,
                    got: z.len(),
                });
            }
            let delta: Vec<f64> = (0..layer.out_dim)
                .map(|o| delta_out[o] * layer.activation.derivative(z[o], y[o]))
                .collect();
            let gw = &mut grads.weights[idx];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                row.iter_mut().zip(x).for_each(|(g, xi)| *g = d * xi);
            }
            grads.biases[idx].copy_from_slice(&delta);
            let mut delta_in = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (i, di) in delta_in.iter_mut().enumerate() {
                    *di += layer.weight(o, i) * d;
                }
            }
            delta_out = delta_in;
        }
        Ok((grads, delta_out))
    }

    fn weight_view(&self, idx: usize) -> ArrayView2<'_, f64> {
        let l = &self.layers[idx];
        ArrayView2::from_shape((l.out_dim, l.in_dim), &l.weights).expect("weights match shape")
    }

    /// Forward pass over a batch (one sample per row).
    pub fn forward_batch(&self, inputs: &Array2<f64>) -> Result<BatchCache> {
        if inputs.ncols() != self.input_dim() {
            return Err(NnError::Shape {
                expected: self.input_dim(),
                got: inputs.ncols(),
            });
        }
        if inputs.iter().any(|x| !x.is_finite()) {
            return Err(NnError::NonFinite { layer: 0 });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(inputs.clone());
        for (idx, layer) in self.layers.iter().enumerate() {
            let x = acts.last().expect("non-empty");
            let mut z = x.dot(&self.weight_view(idx).t());
            for mut row in z.rows_mut() {
                row.iter_mut().zip(&layer.bias).for_each(|(zi, b)| *zi += b);
            }
            let y = z.mapv(|zi| layer.activation.apply(zi));
            pre.push(z);
            acts.push(y);
        }
        Ok(BatchCache { acts, pre })
    }

    /// Batched backward pass. Parameter gradients are summed over the batch;
    /// input gradients are returned per row.
    pub fn backward_batch(
        &self,
        cache: &BatchCache,
        upstream: &Array2<f64>,
    ) -> Result<(GradientBundle, Array2<f64>)> {
        if cache.pre.len() != self.layers.len() {
            return Err(NnError::Shape {
                expected: self.layers.len(),
                got: cache.pre.len(),
            });
        }
        let out = cache.output();
        if upstream.dim() != out.dim() {
            return Err(NnError::Shape {
                expected: out.ncols(),
                got: upstream.ncols(),
            });
        }
        if upstream.iter().any(|x| !x.is_finite()) {
            return Err(NnError::NonFinite {
                layer: self.layers.len() - 1,
            });
        }
        let mut grads = GradientBundle::zeros_like(self);
        let mut delta_out = upstream.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[idx];
            let y = &cache.acts[idx + 1];
            let x = &cache.acts[idx];
            let mut delta = delta_out;
            if layer.activation != Activation::Linear {
                ndarray::Zip::from(&mut delta)
                    .and(z)
                    .and(y)
                    .for_each(|d, &zi, &yi| *d *= layer.activation.derivative(zi, yi));
            }
            let gw = delta.t().dot(x);
            grads.weights[idx].copy_from_slice(gw.as_slice().expect("standard layout"));
            let gb = delta.sum_axis(Axis(0));
            grads.biases[idx].copy_from_slice(gb.as_slice().expect("standard layout"));
            delta_out = delta.dot(&self.weight_view(idx));
        }
        Ok((grads, delta_out))
    }

    /// Writes the parameter snapshot: one JSON header line, then every parameter as
    /// little-endian `f32` in `[W0, b0, W1, b1, ...]` order.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        let header = SnapshotHeader {
            signature: self.signature(),
            activations: self.layers.iter().map(|l| l.activation).collect(),
        };
        let line = serde_json::to_string(&header).map_err(|e| NnError::Snapshot(e.to_string()))?;
        let io = |e: std::io::Error| NnError::Snapshot(e.to_string());
        out.write_all(line.as_bytes()).map_err(io)?;
        out.write_all(b"\n").map_err(io)?;
        for tensor in self.params() {
            for &p in tensor {
                out.write_all(&(p as f32).to_le_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(mut input: R) -> Result<Self> {
        let io = |e: std::io::Error| NnError::Snapshot(e.to_string());
        let mut line = String::new();
        input.read_line(&mut line).map_err(io)?;
        let header: SnapshotHeader =
            serde_json::from_str(line.trim_end()).map_err(|e| NnError::Snapshot(e.to_string()))?;
        if header.activations.len() + 1 != header.signature.len() {
            return Err(NnError::Snapshot(
                "activation count does not match signature".into(),
            ));
        }
        let mut layers = Vec::new();
        let mut buf = [0u8; 4];
        let mut read_vec = |n: usize, input: &mut R| -> Result<Vec<f64>> {
            (0..n)
                .map(|_| {
                    input.read_exact(&mut buf).map_err(io)?;
                    Ok(f32::from_le_bytes(buf) as f64)
                })
                .collect()
        };
        for (pair, &activation) in header.signature.windows(2).zip(&header.activations) {
            let (in_dim, out_dim) = (pair[0], pair[1]);
            let weights = read_vec(in_dim * out_dim, &mut input)?;
            let bias = read_vec(out_dim, &mut input)?;
            layers.push(Dense {
                in_dim,
                out_dim,
                weights,
                bias,
                activation,
            });
        }
        DenseNet::from_layers(layers)
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    signature: Vec<usize>,
    activations: Vec<Activation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for an ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn for_shapes(shapes: &[usize], config: AdamConfig) -> Self {
        AdamState {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn for_net(net: &DenseNet, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
        Self::for_shapes(&shapes, config)
    }

    /// One bias-corrected Adam step over `params` (in place).
    ///
    /// Gradients are validated before anything is touched; a non-finite entry
    /// reports the index of the tensor's owning layer (`tensor / 2` for nets).
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::Shape {
                expected: self.m.len(),
                got: params.len().min(grads.len()),
            });
        }
        for (idx, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[idx].len() || g.len() != self.m[idx].len() {
                return Err(NnError::Shape {
                    expected: self.m[idx].len(),
                    got: g.len(),
                });
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(NnError::NonFinite { layer: idx / 2 });
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (idx, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            for j in 0..p.len() {
                let gj = g[j];
                if gj == 0.0 && m[j] == 0.0 && v[j] == 0.0 {
                    continue;
                }
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one Adam step to `net` using `grads`.
pub fn adam_update(
    net: &mut DenseNet,
    grads: &GradientBundle,
    state: &mut AdamState,
) -> Result<()> {
    let g = grads.tensors();
    state.step(net.params_mut(), &g)
}
