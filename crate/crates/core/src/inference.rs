//! Deterministic forward pass with per-layer activation recording.
//!
//! The trace keeps the input tensor each layer saw, which is exactly what the
//! backward relevance pass consumes. Max-pool layers additionally record the
//! flat index of each window winner so the winner-take-all redistribution is
//! well defined even under ties (first occurrence in row-major window order).

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::model::{LayerSpec, ModelError, NetworkModel};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub enum InferenceError {
    Model(ModelError),
    Tensor(TensorError),
    InputShape { expected: Vec<usize>, got: Vec<usize> },
}

impl fmt::Display for InferenceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InferenceError::Model(e) => write!(f, "{e}"),
            InferenceError::Tensor(e) => write!(f, "{e}"),
            InferenceError::InputShape { expected, got } => {
                write!(f, "input shape {got:?} does not match model input {expected:?}")
            }
        }
    }
}

impl core::error::Error for InferenceError {}

impl From<ModelError> for InferenceError {
    fn from(e: ModelError) -> Self {
        InferenceError::Model(e)
    }
}

impl From<TensorError> for InferenceError {
    fn from(e: TensorError) -> Self {
        InferenceError::Tensor(e)
    }
}

/// Recorded activations from one forward pass over a full discriminator.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    /// Input tensor seen by each layer, index-aligned with `model.layers`.
    pub layer_inputs: Vec<Tensor>,
    /// Output of the final layer.
    pub output: Tensor,
    /// Logit feeding the final sigmoid.
    pub pre_sigmoid: f64,
    /// Post-sigmoid probability, in [0,1].
    pub final_output: f64,
    /// Per layer: flat input index of each max-pool window winner
    /// (row-major over output cells); `None` for non-max-pool layers.
    pub pool_winners: Vec<Option<Vec<usize>>>,
}

/// Activations from a layer stack that need not be a discriminator.
#[derive(Debug, Clone)]
pub struct LayerRun {
    pub layer_inputs: Vec<Tensor>,
    pub output: Tensor,
    pub pool_winners: Vec<Option<Vec<usize>>>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Runs the stack without requiring the discriminator head. Used by the
/// forward pass, the batch-norm folding checks, and property tests.
pub fn run_layers(model: &NetworkModel, image: &Tensor) -> Result<LayerRun, InferenceError> {
    if image.shape() != model.input_shape.as_slice() {
        return Err(InferenceError::InputShape {
            expected: model.input_shape.clone(),
            got: image.shape().to_vec(),
        });
    }
    model.validate_shapes()?;

    let mut layer_inputs = Vec::with_capacity(model.layers.len());
    let mut pool_winners = Vec::with_capacity(model.layers.len());
    let mut current = image.clone();
    for (idx, layer) in model.layers.iter().enumerate() {
        layer_inputs.push(current.clone());
        let (next, winners) = apply_layer(model, idx, layer, &current)?;
        pool_winners.push(winners);
        current = next;
    }
    Ok(LayerRun {
        layer_inputs,
        output: current,
        pool_winners,
    })
}

/// Full forward pass over a validated discriminator, recording every layer's
/// input. Deterministic: identical inputs yield bit-identical traces.
pub fn forward(model: &NetworkModel, image: &Tensor) -> Result<ActivationTrace, InferenceError> {
    model.validate()?;
    let run = run_layers(model, image)?;
    // validate() guarantees a dense(out=1) + sigmoid tail, so the final
    // output is a single probability and the sigmoid input is its logit.
    let pre_sigmoid = run.layer_inputs[model.layers.len() - 1].data()[0];
    let final_output = run.output.data()[0];
    Ok(ActivationTrace {
        layer_inputs: run.layer_inputs,
        output: run.output,
        pre_sigmoid,
        final_output,
        pool_winners: run.pool_winners,
    })
}

/// The discriminator's probability for one image.
pub fn score(model: &NetworkModel, image: &Tensor) -> Result<f64, InferenceError> {
    Ok(forward(model, image)?.final_output)
}

pub(crate) fn apply_layer(
    model: &NetworkModel,
    idx: usize,
    layer: &LayerSpec,
    input: &Tensor,
) -> Result<(Tensor, Option<Vec<usize>>), InferenceError> {
    match layer {
        LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride,
            padding,
            weight,
            bias,
            ..
        } => {
            let w = model.param(idx, weight)?;
            let b = model.param(idx, bias)?;
            let out = conv2d(input, w, b, *out_channels, *kernel, *stride, *padding)?;
            Ok((out, None))
        }
        LayerSpec::Dense { weight, bias, .. } => {
            let w = model.param(idx, weight)?;
            let b = model.param(idx, bias)?;
            Ok((dense(input, w, b)?, None))
        }
        LayerSpec::Relu => Ok((map_values(input, |v| if v > 0.0 { v } else { 0.0 }), None)),
        LayerSpec::LeakyRelu { alpha } => {
            let a = *alpha;
            Ok((map_values(input, move |v| if v < 0.0 { a * v } else { v }), None))
        }
        LayerSpec::Sigmoid => Ok((map_values(input, sigmoid), None)),
        LayerSpec::Flatten => Ok((input.reshape(vec![input.len()])?, None)),
        LayerSpec::MaxPool2d { window, stride } => {
            let (out, winners) = max_pool2d(input, *window, *stride);
            Ok((out, Some(winners)))
        }
        LayerSpec::AvgPool2d { window, stride } => Ok((avg_pool2d(input, *window, *stride), None)),
        LayerSpec::BatchNorm2d {
            channels,
            epsilon,
            gamma,
            beta,
            running_mean,
            running_var,
        } => {
            let g = model.param(idx, gamma)?.data();
            let bt = model.param(idx, beta)?.data();
            let mean = model.param(idx, running_mean)?.data();
            let var = model.param(idx, running_var)?.data();
            let (h, w) = (input.shape()[1], input.shape()[2]);
            let mut out = Vec::with_capacity(input.len());
            for c in 0..*channels {
                let scale = g[c] / libm::sqrt(var[c] + epsilon);
                for &v in &input.data()[c * h * w..(c + 1) * h * w] {
                    out.push((v - mean[c]) * scale + bt[c]);
                }
            }
            Ok((Tensor::new(input.shape().to_vec(), out)?, None))
        }
    }
}

fn map_values(input: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = input.data().iter().map(|&v| f(v)).collect();
    Tensor::from_parts(input.shape().to_vec(), data)
}

/// Cross-correlation (no kernel flip) with zero-padded borders, matching the
/// convention of mainstream training frameworks.
fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    out_channels: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor, TensorError> {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let oh = (h + 2 * padding.0 - kernel.0) / stride.0 + 1;
    let ow = (w + 2 * padding.1 - kernel.1) / stride.1 + 1;
    let mut out = Vec::with_capacity(out_channels * oh * ow);
    let wd = weight.data();
    let xd = input.data();
    for o in 0..out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias.data()[o];
                for c in 0..c_in {
                    for ky in 0..kernel.0 {
                        let iy = (oy * stride.0 + ky) as isize - padding.0 as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel.1 {
                            let ix = (ox * stride.1 + kx) as isize - padding.1 as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let wv = wd[((o * c_in + c) * kernel.0 + ky) * kernel.1 + kx];
                            let xv = xd[(c * h + iy as usize) * w + ix as usize];
                            acc += wv * xv;
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    Tensor::new(vec![out_channels, oh, ow], out)
}

fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    let n = input.len();
    let m = bias.len();
    let wd = weight.data();
    let xd = input.data();
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        let mut acc = bias.data()[j];
        for i in 0..n {
            acc += wd[j * n + i] * xd[i];
        }
        out.push(acc);
    }
    Tensor::new(vec![m], out)
}

/// Returns the pooled tensor and, per output cell in row-major order, the
/// flat input index of the winning element. Ties go to the first occurrence
/// in row-major window order.
pub(crate) fn max_pool2d(input: &Tensor, window: usize, stride: usize) -> (Tensor, Vec<usize>) {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let xd = input.data();
    let mut out = Vec::with_capacity(c_in * oh * ow);
    let mut winners = Vec::with_capacity(c_in * oh * ow);
    for c in 0..c_in {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = (c * h + oy * stride + ky) * w + ox * stride + kx;
                        if xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                winners.push(best_idx);
            }
        }
    }
    (
        Tensor::from_parts(vec![c_in, oh, ow], out),
        winners,
    )
}

fn avg_pool2d(input: &Tensor, window: usize, stride: usize) -> Tensor {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let xd = input.data();
    let inv = 1.0 / (window * window) as f64;
    let mut out = Vec::with_capacity(c_in * oh * ow);
    for c in 0..c_in {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..window {
                    for kx in 0..window {
                        acc += xd[(c * h + oy * stride + ky) * w + ox * stride + kx];
                    }
                }
                out.push(acc * inv);
            }
        }
    }
    Tensor::from_parts(vec![c_in, oh, ow], out)
}
