//! Multilayer perceptron embedding network with exact reverse-mode
//! gradients, Adam, and a cosine-annealed learning rate.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{axpy, Mat, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            // `f64::max` would turn NaN into 0 and hide a diverged network
            Activation::Relu => {
                if z < 0.0 {
                    0.0
                } else {
                    z
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::Config(format!("unknown activation `{s}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weight: Mat,
    pub bias: Vec<f64>,
}

/// Weights of the embedding network. The same shape doubles as the
/// container for gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl EncoderParams {
    /// Glorot-uniform weights and zero biases for the layer widths `dims`
    /// (input first, embedding dimension last).
    pub fn init(dims: &[usize], activation: Activation, rng: &mut SeededRng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer widths must be positive: {dims:?}"
            )));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.uniform(-limit, limit))
                    .collect();
                Layer {
                    weight: Mat::from_vec(fan_out, fan_in, data).expect("sized"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(EncoderParams { layers, activation })
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].weight.rows() != pair[1].weight.cols() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].weight.rows(),
                    found: pair[1].weight.cols(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.weight.rows() {
                return Err(Error::DimensionMismatch {
                    expected: l.weight.rows(),
                    found: l.bias.len(),
                });
            }
        }
        Ok(EncoderParams { layers, activation })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.weight.rows()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.rows()
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Mat::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            activation: self.activation,
        }
    }

    /// Parameter tensors in checkpoint order: `W0, b0, W1, b1, ...`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// `self += other`, elementwise.
    pub fn accumulate(&mut self, other: &EncoderParams) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(1.0, src, dst);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Per-layer intermediates from [`forward`] needed by [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
}

/// Runs the network; hidden layers are affine + activation, the final
/// layer is affine only.
pub fn forward(params: &EncoderParams, features: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    if features.len() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            found: features.len(),
        });
    }
    let last = params.layers.len() - 1;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut h = features.to_vec();
    for (k, layer) in params.layers.iter().enumerate() {
        let mut z = layer.weight.matvec(&h);
        axpy(1.0, &layer.bias, &mut z);
        let next = if k == last {
            z.clone()
        } else {
            z.iter().map(|&v| params.activation.apply(v)).collect()
        };
        inputs.push(h);
        pre.push(z);
        h = next;
    }
    Ok((h, ForwardCache { inputs, pre }))
}

/// Embedding without keeping the cache.
pub fn embed(params: &EncoderParams, features: &[f64]) -> Result<Vec<f64>> {
    forward(params, features).map(|(e, _)| e)
}

/// Gradient of `embedding · grad_embedding` w.r.t. every weight and bias.
pub fn backward(
    params: &EncoderParams,
    cache: &ForwardCache,
    grad_embedding: &[f64],
) -> Result<EncoderParams> {
    if grad_embedding.len() != params.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.output_dim(),
            found: grad_embedding.len(),
        });
    }
    if cache.inputs.len() != params.layers.len() {
        return Err(Error::DimensionMismatch {
            expected: params.layers.len(),
            found: cache.inputs.len(),
        });
    }
    let mut grads = params.zeros_like();
    let last = params.layers.len() - 1;
    // gradient w.r.t. the current layer's pre-activation
    let mut delta = grad_embedding.to_vec();
    for k in (0..=last).rev() {
        if k != last {
            for (d, &z) in delta.iter_mut().zip(&cache.pre[k]) {
                *d *= params.activation.derivative(z);
            }
        }
        let input = &cache.inputs[k];
        let g = &mut grads.layers[k];
        for (r, &dr) in delta.iter().enumerate() {
            if dr != 0.0 {
                axpy(dr, input, g.weight.row_mut(r));
            }
        }
        g.bias.copy_from_slice(&delta);
        if k > 0 {
            delta = params.layers[k].weight.matvec_t(&delta);
        }
    }
    Ok(grads)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments for tensors of the given lengths.
    pub fn new(shapes: &[usize]) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam update over a list of tensors.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            expected: state.m.len(),
            found: params.len().min(grads.len()),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::DimensionMismatch {
                expected: m.len(),
                found: p.len().min(g.len()),
            });
        }
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub lr0: f64,
    pub lr_min: f64,
    pub total_epochs: usize,
}

/// `lr_min + (lr0 − lr_min)(1 + cos(π e / T)) / 2` for 0-based epoch `e`.
pub fn cosine_lr(epoch: usize, sched: &LrSchedule) -> f64 {
    let t = sched.total_epochs.max(1) as f64;
    let e = (epoch as f64).min(t);
    sched.lr_min + (sched.lr0 - sched.lr_min) * (1.0 + (PI * e / t).cos()) / 2.0
}
