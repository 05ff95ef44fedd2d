//! Network description: ordered layer specs plus a named parameter store.
//!
//! A model is the discriminator under inspection. Layers reference their
//! parameter tensors by name; the tensors live in a shared map so the same
//! structure round-trips cleanly through the on-disk format.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::tensor::Tensor;

/// One layer of the network. Parameterized kinds carry the names of their
/// tensors in the model's parameter map.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        weight: String,
        bias: String,
    },
    Dense {
        in_features: usize,
        out_features: usize,
        weight: String,
        bias: String,
    },
    Relu,
    LeakyRelu {
        alpha: f64,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    AvgPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
    Sigmoid,
    BatchNorm2d {
        channels: usize,
        epsilon: f64,
        gamma: String,
        beta: String,
        running_mean: String,
        running_var: String,
    },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::MaxPool2d { .. } => "max_pool2d",
            LayerSpec::AvgPool2d { .. } => "avg_pool2d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::BatchNorm2d { .. } => "batch_norm2d",
        }
    }

    /// Names of the parameter tensors this layer owns, in role order.
    pub fn parameter_names(&self) -> Vec<&str> {
        match self {
            LayerSpec::Conv2d { weight, bias, .. } | LayerSpec::Dense { weight, bias, .. } => {
                vec![weight, bias]
            }
            LayerSpec::BatchNorm2d {
                gamma,
                beta,
                running_mean,
                running_var,
                ..
            } => vec![gamma, beta, running_mean, running_var],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    /// A layer references a parameter name absent from the store.
    MissingParam { layer: usize, name: String },
    /// A parameter tensor has the wrong shape for its layer.
    ParamShape {
        layer: usize,
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    /// A hyperparameter violates its declared range or structure.
    InvalidLayer { layer: usize, detail: String },
    /// The shape chain breaks between consecutive layers.
    ShapeChain { layer: usize, detail: String },
    /// The model does not end in dense(out=1) followed by sigmoid.
    NotDiscriminator { detail: String },
    /// batch_norm2d without an immediately preceding conv2d.
    BatchNormPlacement { layer: usize },
    /// Two layers claim the same parameter tensor.
    SharedParam { name: String },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::MissingParam { layer, name } => {
                write!(f, "layer {layer}: missing parameter tensor '{name}'")
            }
            ModelError::ParamShape {
                layer,
                name,
                expected,
                got,
            } => write!(
                f,
                "layer {layer}: parameter '{name}' has shape {got:?}, expected {expected:?}"
            ),
            ModelError::InvalidLayer { layer, detail } => {
                write!(f, "layer {layer}: {detail}")
            }
            ModelError::ShapeChain { layer, detail } => {
                write!(f, "layer {layer}: {detail}")
            }
            ModelError::NotDiscriminator { detail } => {
                write!(f, "not a discriminator: {detail}")
            }
            ModelError::BatchNormPlacement { layer } => {
                write!(f, "layer {layer}: batch_norm2d must immediately follow conv2d")
            }
            ModelError::SharedParam { name } => {
                write!(f, "parameter tensor '{name}' is claimed by more than one layer")
            }
        }
    }
}

impl core::error::Error for ModelError {}

/// Ordered layer stack with its parameter tensors and free-form metadata.
///
/// Immutable once built; explanations may share one model across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub params: BTreeMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

impl NetworkModel {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        NetworkModel {
            input_shape,
            layers,
            params: BTreeMap::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, name: &str, tensor: Tensor) -> Self {
        self.params.insert(String::from(name), tensor);
        self
    }

    pub fn param(&self, layer: usize, name: &str) -> Result<&Tensor, ModelError> {
        self.params.get(name).ok_or(ModelError::MissingParam {
            layer,
            name: String::from(name),
        })
    }

    /// Walks the shape chain from `input_shape` through every layer, checking
    /// hyperparameters and parameter tensor shapes along the way.
    ///
    /// Returns the per-layer input shapes followed by the final output shape
    /// (length `layers.len() + 1`).
    pub fn validate_shapes(&self) -> Result<Vec<Vec<usize>>, ModelError> {
        let mut claimed: BTreeSet<&str> = BTreeSet::new();
        for layer in &self.layers {
            for name in layer.parameter_names() {
                if !claimed.insert(name) {
                    return Err(ModelError::SharedParam {
                        name: String::from(name),
                    });
                }
            }
        }

        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut current = self.input_shape.clone();
        shapes.push(current.clone());
        for (idx, layer) in self.layers.iter().enumerate() {
            current = self.layer_output_shape(idx, layer, &current)?;
            shapes.push(current.clone());
        }
        Ok(shapes)
    }

    /// Full validation: shape chain plus the discriminator head rule
    /// (final layer sigmoid, preceded by dense with one output).
    pub fn validate(&self) -> Result<Vec<Vec<usize>>, ModelError> {
        let shapes = self.validate_shapes()?;
        let n = self.layers.len();
        if n < 2 {
            return Err(ModelError::NotDiscriminator {
                detail: String::from("needs at least dense(out=1) followed by sigmoid"),
            });
        }
        if !matches!(self.layers[n - 1], LayerSpec::Sigmoid) {
            return Err(ModelError::NotDiscriminator {
                detail: String::from("final layer must be sigmoid"),
            });
        }
        match &self.layers[n - 2] {
            LayerSpec::Dense { out_features: 1, .. } => {}
            other => {
                return Err(ModelError::NotDiscriminator {
                    detail: format!(
                        "layer before sigmoid must be dense with one output, found {}",
                        other.kind_name()
                    ),
                })
            }
        }
        Ok(shapes)
    }

    /// Output shape of the layer at `idx` for a given input shape.
    pub fn layer_output_shape_of(
        &self,
        idx: usize,
        input: &[usize],
    ) -> Result<Vec<usize>, ModelError> {
        self.layer_output_shape(idx, &self.layers[idx], input)
    }

    fn expect_chw(
        &self,
        idx: usize,
        layer: &LayerSpec,
        input: &[usize],
    ) -> Result<(usize, usize, usize), ModelError> {
        if input.len() != 3 {
            return Err(ModelError::ShapeChain {
                layer: idx,
                detail: format!(
                    "{} expects [C,H,W] input, got rank {}",
                    layer.kind_name(),
                    input.len()
                ),
            });
        }
        Ok((input[0], input[1], input[2]))
    }

    fn layer_output_shape(
        &self,
        idx: usize,
        layer: &LayerSpec,
        input: &[usize],
    ) -> Result<Vec<usize>, ModelError> {
        match layer {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                weight,
                bias,
            } => {
                let (c, h, w) = self.expect_chw(idx, layer, input)?;
                if c != *in_channels {
                    return Err(ModelError::ShapeChain {
                        layer: idx,
                        detail: format!("conv2d declares {in_channels} input channels, input has {c}"),
                    });
                }
                if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                    return Err(ModelError::InvalidLayer {
                        layer: idx,
                        detail: String::from("conv2d kernel and stride must be nonzero"),
                    });
                }
                let wt = self.param(idx, weight)?;
                let expected_w = vec![*out_channels, *in_channels, kernel.0, kernel.1];
                if wt.shape() != expected_w.as_slice() {
                    return Err(ModelError::ParamShape {
                        layer: idx,
                        name: weight.clone(),
                        expected: expected_w,
                        got: wt.shape().to_vec(),
                    });
                }
                let bt = self.param(idx, bias)?;
                if bt.shape() != [*out_channels] {
                    return Err(ModelError::ParamShape {
                        layer: idx,
                        name: bias.clone(),
                        expected: vec![*out_channels],
                        got: bt.shape().to_vec(),
                    });
                }
                let padded_h = h + 2 * padding.0;
                let padded_w = w + 2 * padding.1;
                if padded_h < kernel.0 || padded_w < kernel.1 {
                    return Err(ModelError::ShapeChain {
                        layer: idx,
                        detail: format!(
                            "conv2d kernel {:?} larger than padded input {}x{}",
                            kernel, padded_h, padded_w
                        ),
                    });
                }
                let oh = (padded_h - kernel.0) / stride.0 + 1;
                let ow = (padded_w - kernel.1) / stride.1 + 1;
                Ok(vec![*out_channels, oh, ow])
            }
            LayerSpec::Dense {
                in_features,
                out_features,
                weight,
                bias,
            } => {
                if input.len() != 1 || input[0] != *in_features {
                    return Err(ModelError::ShapeChain {
                        layer: idx,
                        detail: format!(
                            "dense expects flat input of {in_features} features, got {input:?}"
                        ),
                    });
                }
                let wt = self.param(idx, weight)?;
                let expected_w = vec![*out_features, *in_features];
                if wt.shape() != expected_w.as_slice() {
                    return Err(ModelError::ParamShape {
                        layer: idx,
                        name: weight.clone(),
                        expected: expected_w,
                        got: wt.shape().to_vec(),
                    });
                }
                let bt = self.param(idx, bias)?;
                if bt.shape() != [*out_features] {
                    return Err(ModelError::ParamShape {
                        layer: idx,
                        name: bias.clone(),
                        expected: vec![*out_features],
                        got: bt.shape().to_vec(),
                    });
                }
                Ok(vec![*out_features])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::LeakyRelu { alpha } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(ModelError::InvalidLayer {
                        layer: idx,
                        detail: format!("leaky_relu alpha must lie in (0,1), got {alpha}"),
                    });
                }
                Ok(input.to_vec())
            }
            LayerSpec::MaxPool2d { window, stride } | LayerSpec::AvgPool2d { window, stride } => {
                let (c, h, w) = self.expect_chw(idx, layer, input)?;
                if *window == 0 || *stride == 0 {
                    return Err(ModelError::InvalidLayer {
                        layer: idx,
                        detail: String::from("pool window and stride must be nonzero"),
                    });
                }
                if *window > h || *window > w {
                    return Err(ModelError::ShapeChain {
                        layer: idx,
                        detail: format!("pool window {window} larger than input {h}x{w}"),
                    });
                }
                Ok(vec![c, (h - window) / stride + 1, (w - window) / stride + 1])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::BatchNorm2d {
                channels,
                epsilon,
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                let (c, _h, _w) = self.expect_chw(idx, layer, input)?;
                if c != *channels {
                    return Err(ModelError::ShapeChain {
                        layer: idx,
                        detail: format!("batch_norm2d declares {channels} channels, input has {c}"),
                    });
                }
                if !epsilon.is_finite() || *epsilon < 0.0 {
                    return Err(ModelError::InvalidLayer {
                        layer: idx,
                        detail: String::from("batch_norm2d epsilon must be finite and >= 0"),
                    });
                }
                for name in [gamma, beta, running_mean, running_var] {
                    let t = self.param(idx, name)?;
                    if t.shape() != [*channels] {
                        return Err(ModelError::ParamShape {
                            layer: idx,
                            name: name.clone(),
                            expected: vec![*channels],
                            got: t.shape().to_vec(),
                        });
                    }
                }
                let var = self.param(idx, running_var)?;
                if var.data().iter().any(|&v| v <= 0.0) {
                    return Err(ModelError::InvalidLayer {
                        layer: idx,
                        detail: String::from("batch_norm2d running variance must be positive"),
                    });
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Returns an equivalent model with every batch_norm2d absorbed into the
    /// conv2d immediately before it.
    ///
    /// For each folded pair the conv parameters become
    /// `w' = w * gamma / sqrt(var + eps)` per output channel and
    /// `b' = (b - mean) * gamma / sqrt(var + eps) + beta`, so forward outputs
    /// are unchanged up to rounding.
    pub fn fold_batch_norm(&self) -> Result<NetworkModel, ModelError> {
        let mut layers: Vec<LayerSpec> = Vec::with_capacity(self.layers.len());
        let mut params = self.params.clone();

        for (idx, layer) in self.layers.iter().enumerate() {
            let LayerSpec::BatchNorm2d {
                channels,
                epsilon,
                gamma,
                beta,
                running_mean,
                running_var,
            } = layer
            else {
                layers.push(layer.clone());
                continue;
            };

            let Some(LayerSpec::Conv2d {
                out_channels,
                weight,
                bias,
                ..
            }) = layers.last()
            else {
                return Err(ModelError::BatchNormPlacement { layer: idx });
            };
            if out_channels != channels {
                return Err(ModelError::ShapeChain {
                    layer: idx,
                    detail: format!(
                        "batch_norm2d channels {channels} do not match conv2d output {out_channels}"
                    ),
                });
            }

            let g = self.param(idx, gamma)?.data().to_vec();
            let bt = self.param(idx, beta)?.data().to_vec();
            let mean = self.param(idx, running_mean)?.data().to_vec();
            let var = self.param(idx, running_var)?.data().to_vec();
            let w = self.param(idx, weight)?;
            let b = self.param(idx, bias)?;

            let per_channel: usize = w.shape()[1..].iter().product();
            let mut new_w = w.data().to_vec();
            let mut new_b = b.data().to_vec();
            for c in 0..*channels {
                let scale = g[c] / libm::sqrt(var[c] + epsilon);
                for v in &mut new_w[c * per_channel..(c + 1) * per_channel] {
                    *v *= scale;
                }
                new_b[c] = (new_b[c] - mean[c]) * scale + bt[c];
            }
            params.insert(
                weight.clone(),
                Tensor::new(w.shape().to_vec(), new_w).map_err(|_| ModelError::InvalidLayer {
                    layer: idx,
                    detail: String::from("folded weights are not finite"),
                })?,
            );
            params.insert(
                bias.clone(),
                Tensor::new(b.shape().to_vec(), new_b).map_err(|_| ModelError::InvalidLayer {
                    layer: idx,
                    detail: String::from("folded biases are not finite"),
                })?,
            );
            for name in [gamma, beta, running_mean, running_var] {
                params.remove(name.as_str());
            }
        }

        Ok(NetworkModel {
            input_shape: self.input_shape.clone(),
            layers,
            params,
            metadata: self.metadata.clone(),
        })
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::BatchNorm2d { .. }))
    }
}
