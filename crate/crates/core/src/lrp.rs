//! Polarized relevance propagation with conservation accounting.
//!
//! The discriminator's single probability is pushed backwards through the
//! recorded trace. Per affine layer, each output's relevance is split over
//! its inputs in proportion to the sign-truncated products `w*x`: positive
//! truncation explains a "real" verdict, negative truncation a "fake" one.
//! Both branches divide same-sign quantities, so relevance magnitudes stay
//! nonnegative and the polarity travels as metadata.
//!
//! Relevance absorbed by bias terms or by outputs whose truncated denominator
//! vanishes is never silently renormalized; it is accumulated as leakage and
//! reported per layer, keeping the conservation ledger honest.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::inference::{self, ActivationTrace, InferenceError};
use crate::model::{LayerSpec, ModelError, NetworkModel};
use crate::tensor::Tensor;

/// Which truncation branch an explanation follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    /// Positive contributions; the branch for images classified real.
    Positive,
    /// Negative contributions; the branch for images classified fake.
    Negative,
}

impl Polarity {
    pub fn name(&self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }

    #[inline]
    fn trunc(&self, v: f64) -> f64 {
        match self {
            Polarity::Positive => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
            Polarity::Negative => {
                if v < 0.0 {
                    v
                } else {
                    0.0
                }
            }
        }
    }
}

/// Polarity selection: fixed, or decided by the verdict (>= 0.5 means real).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PolarityChoice {
    #[default]
    Auto,
    Fixed(Polarity),
}

/// What to inject at the output neuron before propagating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialRelevance {
    /// The post-sigmoid probability itself.
    #[default]
    Probability,
    /// A constant 1.0; heatmap normalization makes the two visually equal.
    One,
    /// Magnitude of the pre-sigmoid logit (polarity already carries its sign).
    Logit,
}

#[derive(Debug, Clone, Copy)]
pub struct LrpOptions {
    pub polarity: PolarityChoice,
    pub initial: InitialRelevance,
    /// Optional denominator stabilizer, sign-matched to the branch.
    /// Off by default: degenerate denominators leak instead.
    pub denominator_epsilon: Option<f64>,
}

impl Default for LrpOptions {
    fn default() -> Self {
        LrpOptions {
            polarity: PolarityChoice::Auto,
            initial: InitialRelevance::Probability,
            denominator_epsilon: None,
        }
    }
}

/// Conservation ledger entry for one layer, output-to-input order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerFlow {
    pub layer_index: usize,
    pub sum_before: f64,
    pub sum_after: f64,
    /// Relevance absorbed here by biases and degenerate denominators,
    /// accumulated directly from those terms (not as a sum difference).
    pub leaked: f64,
}

/// Per-pixel relevance over the input image with conservation bookkeeping.
#[derive(Debug, Clone)]
pub struct RelevanceMap {
    /// Nonnegative relevance magnitudes, same shape as the input image.
    pub values: Tensor,
    pub polarity: Polarity,
    /// Relevance injected at the output neuron.
    pub initial_relevance: f64,
    /// `[0]` is the injected relevance; entry `k+1` is the total after
    /// propagating through the k-th layer counted from the output.
    pub per_layer_sums: Vec<f64>,
    /// Per-layer conservation ledger, output-to-input order.
    pub flows: Vec<LayerFlow>,
    /// Total relevance absorbed by biases and degenerate denominators.
    pub leaked_relevance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LrpError {
    Inference(InferenceError),
    Model(ModelError),
    /// Relevance tensor shape does not match the layer's output shape.
    Shape { expected: Vec<usize>, got: Vec<usize> },
    NegativeRelevance { index: usize },
    /// Propagation has no rule for this layer kind (fold batch norm first).
    UnsupportedLayer { layer: usize, kind: &'static str },
    /// Internal invariant breach: relevance plus leakage drifted from the
    /// injected amount. Never silently returns a zero map.
    ConservationBreach { expected: f64, got: f64 },
}

impl fmt::Display for LrpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LrpError::Inference(e) => write!(f, "{e}"),
            LrpError::Model(e) => write!(f, "{e}"),
            LrpError::Shape { expected, got } => {
                write!(f, "relevance shape {got:?} does not match layer output {expected:?}")
            }
            LrpError::NegativeRelevance { index } => {
                write!(f, "negative relevance at flat index {index}")
            }
            LrpError::UnsupportedLayer { layer, kind } => {
                write!(f, "layer {layer} ({kind}) has no propagation rule; fold batch norm first")
            }
            LrpError::ConservationBreach { expected, got } => {
                write!(f, "conservation breach: injected {expected}, recovered {got}")
            }
        }
    }
}

impl core::error::Error for LrpError {}

impl From<InferenceError> for LrpError {
    fn from(e: InferenceError) -> Self {
        LrpError::Inference(e)
    }
}

impl From<ModelError> for LrpError {
    fn from(e: ModelError) -> Self {
        LrpError::Model(e)
    }
}

/// Runs the forward pass and propagates the verdict back to the input pixels.
pub fn explain(
    model: &NetworkModel,
    image: &Tensor,
    options: &LrpOptions,
) -> Result<RelevanceMap, LrpError> {
    let trace = inference::forward(model, image)?;
    explain_trace(model, &trace, options)
}

/// Propagates relevance over an already-recorded trace.
pub fn explain_trace(
    model: &NetworkModel,
    trace: &ActivationTrace,
    options: &LrpOptions,
) -> Result<RelevanceMap, LrpError> {
    let polarity = match options.polarity {
        PolarityChoice::Fixed(p) => p,
        PolarityChoice::Auto => {
            if trace.final_output >= 0.5 {
                Polarity::Positive
            } else {
                Polarity::Negative
            }
        }
    };
    let initial = match options.initial {
        InitialRelevance::Probability => trace.final_output,
        InitialRelevance::One => 1.0,
        InitialRelevance::Logit => trace.pre_sigmoid.abs(),
    };

    let mut relevance = Tensor::filled(trace.output.shape().to_vec(), initial)
        .expect("initial relevance is finite");
    let mut per_layer_sums = vec![initial];
    let mut flows = Vec::with_capacity(model.layers.len());
    let mut leaked_total = 0.0;

    for idx in (0..model.layers.len()).rev() {
        let sum_before = relevance.sum();
        let (next, leaked) = propagate_layer(
            model,
            idx,
            &trace.layer_inputs[idx],
            &relevance,
            polarity,
            options,
        )?;
        let sum_after = next.sum();
        per_layer_sums.push(sum_after);
        flows.push(LayerFlow {
            layer_index: idx,
            sum_before,
            sum_after,
            leaked,
        });
        leaked_total += leaked;
        relevance = next;
    }

    if let Some(i) = relevance.data().iter().position(|&v| v < 0.0) {
        return Err(LrpError::NegativeRelevance { index: i });
    }
    let recovered = relevance.sum() + leaked_total;
    let tol = 1e-6 * initial.max(1e-12);
    if (recovered - initial).abs() > tol {
        return Err(LrpError::ConservationBreach {
            expected: initial,
            got: recovered,
        });
    }

    Ok(RelevanceMap {
        values: relevance,
        polarity,
        initial_relevance: initial,
        per_layer_sums,
        flows,
        leaked_relevance: leaked_total,
    })
}

/// Per-layer conservation ledger of a finished explanation.
pub fn conservation_report(map: &RelevanceMap) -> &[LayerFlow] {
    &map.flows
}

/// Propagates relevance backwards through a single layer.
///
/// Returns the relevance over the layer's input and the amount leaked to
/// bias terms and degenerate denominators. An output with positive relevance
/// but an all-zero truncated denominator is not an error: its relevance moves
/// wholly into the leak.
pub fn propagate_layer(
    model: &NetworkModel,
    layer_index: usize,
    layer_input: &Tensor,
    out_relevance: &Tensor,
    polarity: Polarity,
    options: &LrpOptions,
) -> Result<(Tensor, f64), LrpError> {
    if let Some(i) = out_relevance.data().iter().position(|&v| v < 0.0) {
        return Err(LrpError::NegativeRelevance { index: i });
    }
    let layer = &model.layers[layer_index];
    let expected = model
        .layer_output_shape_of(layer_index, layer_input.shape())
        .map_err(LrpError::Model)?;
    if out_relevance.shape() != expected.as_slice() {
        return Err(LrpError::Shape {
            expected,
            got: out_relevance.shape().to_vec(),
        });
    }

    let eps = options.denominator_epsilon.map(|e| match polarity {
        Polarity::Positive => e,
        Polarity::Negative => -e,
    });

    match layer {
        LayerSpec::Relu | LayerSpec::LeakyRelu { .. } | LayerSpec::Sigmoid => {
            Ok((out_relevance.clone(), 0.0))
        }
        LayerSpec::Flatten => Ok((
            out_relevance
                .reshape(layer_input.shape().to_vec())
                .map_err(|e| LrpError::Inference(InferenceError::Tensor(e)))?,
            0.0,
        )),
        LayerSpec::MaxPool2d { window, stride } => {
            Ok(max_pool_backward(layer_input, out_relevance, *window, *stride))
        }
        LayerSpec::AvgPool2d { window, stride } => Ok(avg_pool_backward(
            layer_input,
            out_relevance,
            *window,
            *stride,
            polarity,
            eps,
        )),
        LayerSpec::Dense { weight, bias, .. } => {
            let w = model.param(layer_index, weight)?;
            let b = model.param(layer_index, bias)?;
            Ok(dense_backward(layer_input, out_relevance, w, b, polarity, eps))
        }
        LayerSpec::Conv2d {
            kernel,
            stride,
            padding,
            weight,
            bias,
            ..
        } => {
            let w = model.param(layer_index, weight)?;
            let b = model.param(layer_index, bias)?;
            Ok(conv_backward(
                layer_input,
                out_relevance,
                w,
                b,
                *kernel,
                *stride,
                *padding,
                polarity,
                eps,
            ))
        }
        LayerSpec::BatchNorm2d { .. } => Err(LrpError::UnsupportedLayer {
            layer: layer_index,
            kind: layer.kind_name(),
        }),
    }
}

fn dense_backward(
    input: &Tensor,
    out_rel: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    polarity: Polarity,
    eps: Option<f64>,
) -> (Tensor, f64) {
    let n = input.len();
    let m = bias.len();
    let wd = weight.data();
    let xd = input.data();
    let rd = out_rel.data();
    let mut in_rel = vec![0.0; n];
    let mut leaked = 0.0;

    for j in 0..m {
        let rj = rd[j];
        if rj == 0.0 {
            continue;
        }
        let bias_part = polarity.trunc(bias.data()[j]);
        let mut denom = 0.0;
        for i in 0..n {
            denom += polarity.trunc(wd[j * n + i] * xd[i]);
        }
        denom += bias_part;
        let eps_part = eps.unwrap_or(0.0);
        denom += eps_part;
        if denom == 0.0 {
            leaked += rj;
            continue;
        }
        let scale = rj / denom;
        for i in 0..n {
            let z = polarity.trunc(wd[j * n + i] * xd[i]);
            if z != 0.0 {
                in_rel[i] += z * scale;
            }
        }
        leaked += (bias_part + eps_part) * scale;
    }
    (Tensor::from_parts(vec![n], in_rel), leaked)
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &Tensor,
    out_rel: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
    polarity: Polarity,
    eps: Option<f64>,
) -> (Tensor, f64) {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (out_channels, oh, ow) = (out_rel.shape()[0], out_rel.shape()[1], out_rel.shape()[2]);
    let wd = weight.data();
    let xd = input.data();
    let rd = out_rel.data();
    let mut in_rel = vec![0.0; input.len()];
    let mut leaked = 0.0;

    for o in 0..out_channels {
        let bias_part = polarity.trunc(bias.data()[o]);
        for oy in 0..oh {
            for ox in 0..ow {
                let rj = rd[(o * oh + oy) * ow + ox];
                if rj == 0.0 {
                    continue;
                }
                // Pass 1: truncated denominator over the receptive field.
                // Taps landing in the zero padding contribute trunc(w*0) = 0,
                // identical to skipping them.
                let mut denom = 0.0;
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
                            denom += polarity.trunc(wv * xv);
                        }
                    }
                }
                denom += bias_part;
                let eps_part = eps.unwrap_or(0.0);
                denom += eps_part;
                if denom == 0.0 {
                    leaked += rj;
                    continue;
                }
                let scale = rj / denom;
                // Pass 2: distribute, accumulating across overlapping windows.
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
                            let idx = (c * h + iy as usize) * w + ix as usize;
                            let z = polarity.trunc(wv * xd[idx]);
                            if z != 0.0 {
                                in_rel[idx] += z * scale;
                            }
                        }
                    }
                }
                leaked += (bias_part + eps_part) * scale;
            }
        }
    }
    (
        Tensor::from_parts(input.shape().to_vec(), in_rel),
        leaked,
    )
}

/// Winner-take-all: each output cell's relevance goes to the input cell that
/// produced the maximum. Winners are recomputed from the layer input with the
/// same deterministic tie rule the forward pass uses.
fn max_pool_backward(input: &Tensor, out_rel: &Tensor, window: usize, stride: usize) -> (Tensor, f64) {
    let (_, winners) = inference::max_pool2d(input, window, stride);
    let mut in_rel = vec![0.0; input.len()];
    for (cell, &winner) in winners.iter().enumerate() {
        in_rel[winner] += out_rel.data()[cell];
    }
    (Tensor::from_parts(input.shape().to_vec(), in_rel), 0.0)
}

/// Average pooling treated as a bias-free convolution with uniform weights
/// `1/window^2` under the same truncated-fraction rule.
fn avg_pool_backward(
    input: &Tensor,
    out_rel: &Tensor,
    window: usize,
    stride: usize,
    polarity: Polarity,
    eps: Option<f64>,
) -> (Tensor, f64) {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (out_rel.shape()[1], out_rel.shape()[2]);
    let xd = input.data();
    let rd = out_rel.data();
    let inv = 1.0 / (window * window) as f64;
    let mut in_rel = vec![0.0; input.len()];
    let mut leaked = 0.0;

    for c in 0..c_in {
        for oy in 0..oh {
            for ox in 0..ow {
                let rj = rd[(c * oh + oy) * ow + ox];
                if rj == 0.0 {
                    continue;
                }
                let mut denom = 0.0;
                for ky in 0..window {
                    for kx in 0..window {
                        denom += polarity.trunc(xd[(c * h + oy * stride + ky) * w + ox * stride + kx] * inv);
                    }
                }
                let eps_part = eps.unwrap_or(0.0);
                denom += eps_part;
                if denom == 0.0 {
                    leaked += rj;
                    continue;
                }
                let scale = rj / denom;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = (c * h + oy * stride + ky) * w + ox * stride + kx;
                        let z = polarity.trunc(xd[idx] * inv);
                        if z != 0.0 {
                            in_rel[idx] += z * scale;
                        }
                    }
                }
                leaked += eps_part * scale;
            }
        }
    }
    (Tensor::from_parts(input.shape().to_vec(), in_rel), leaked)
}
