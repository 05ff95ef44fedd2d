//! Seeded synthetic models and inputs for randomized verification.
//!
//! The stack generator walks the shape chain while sampling layer kinds, so
//! every generated model validates. Two weight regimes matter downstream:
//! strictly positive weights with zero biases give propagation runs with no
//! bias absorption and no degenerate denominators (every activation that
//! carries relevance has a positive truncated denominator), which is what
//! exact conservation checks need; signed weights with biases exercise the
//! general case for round-trips and folding.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::model::{LayerSpec, NetworkModel};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct StackConfig {
    pub min_mid_layers: usize,
    pub max_mid_layers: usize,
    pub max_channels: usize,
    pub min_spatial: usize,
    pub max_spatial: usize,
    /// Sampling range for weights.
    pub weight_range: (f64, f64),
    /// Sampling range for biases; `None` keeps every bias at zero.
    pub bias_range: Option<(f64, f64)>,
    /// Insert a batch_norm2d after some convolutions.
    pub allow_batch_norm: bool,
}

impl StackConfig {
    /// Bias-free stacks with strictly positive weights: relevance propagated
    /// with positive polarity over positive inputs conserves exactly.
    pub fn conservation() -> Self {
        StackConfig {
            min_mid_layers: 2,
            max_mid_layers: 5,
            max_channels: 3,
            min_spatial: 6,
            max_spatial: 16,
            weight_range: (0.05, 1.0),
            bias_range: None,
            allow_batch_norm: false,
        }
    }

    /// Signed weights and biases, optionally with batch norm.
    pub fn general(allow_batch_norm: bool) -> Self {
        StackConfig {
            min_mid_layers: 2,
            max_mid_layers: 5,
            max_channels: 3,
            min_spatial: 6,
            max_spatial: 12,
            weight_range: (-1.0, 1.0),
            bias_range: Some((-0.5, 0.5)),
            allow_batch_norm,
        }
    }
}

fn random_tensor(rng: &mut SeededRng, shape: Vec<usize>, range: (f64, f64)) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.next_range(range.0, range.1)).collect();
    Tensor::new(shape, data).expect("sampled values are finite")
}

/// Uniform random image in [lo, hi) with the given shape.
pub fn random_input(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    random_tensor(rng, shape.to_vec(), (lo, hi))
}

/// Random discriminator: sampled mid layers, then flatten if needed, then the
/// dense(out=1) + sigmoid head.
pub fn random_model(rng: &mut SeededRng, cfg: &StackConfig) -> NetworkModel {
    let channels = 1 + rng.next_below(cfg.max_channels);
    let side = cfg.min_spatial + rng.next_below(cfg.max_spatial - cfg.min_spatial + 1);
    let input_shape = vec![channels, side, side];

    let mut layers: Vec<LayerSpec> = Vec::new();
    let mut params: Vec<(String, Tensor)> = Vec::new();
    let mut shape = input_shape.clone();
    let n_mid =
        cfg.min_mid_layers + rng.next_below(cfg.max_mid_layers - cfg.min_mid_layers + 1);

    let bias_tensor = |rng: &mut SeededRng, n: usize, cfg: &StackConfig| match cfg.bias_range {
        Some(range) => random_tensor(rng, vec![n], range),
        None => Tensor::zeros(vec![n]),
    };

    for li in 0..n_mid {
        if shape.len() == 3 {
            let (c, h, w) = (shape[0], shape[1], shape[2]);
            let small = h.min(w) < 3;
            // kinds: 0 conv, 1 max pool, 2 avg pool, 3 relu, 4 leaky, 5 flatten
            let kind = if small { 3 + rng.next_below(3) } else { rng.next_below(6) };
            match kind {
                0 => {
                    let out_c = 1 + rng.next_below(cfg.max_channels);
                    let k = 1 + rng.next_below(3.min(h.min(w)));
                    let stride = 1 + rng.next_below(2);
                    let pad = rng.next_below(2);
                    let weight = random_tensor(rng, vec![out_c, c, k, k], cfg.weight_range);
                    let bias = bias_tensor(rng, out_c, cfg);
                    let wname = format!("w{li}");
                    let bname = format!("b{li}");
                    params.push((wname.clone(), weight));
                    params.push((bname.clone(), bias));
                    layers.push(LayerSpec::Conv2d {
                        in_channels: c,
                        out_channels: out_c,
                        kernel: (k, k),
                        stride: (stride, stride),
                        padding: (pad, pad),
                        weight: wname,
                        bias: bname,
                    });
                    shape = vec![
                        out_c,
                        (h + 2 * pad - k) / stride + 1,
                        (w + 2 * pad - k) / stride + 1,
                    ];
                    if cfg.allow_batch_norm && rng.next_f64() < 0.5 {
                        let names = [
                            format!("g{li}"),
                            format!("be{li}"),
                            format!("mu{li}"),
                            format!("var{li}"),
                        ];
                        params.push((names[0].clone(), random_tensor(rng, vec![out_c], (0.5, 1.5))));
                        params.push((names[1].clone(), random_tensor(rng, vec![out_c], (-0.5, 0.5))));
                        params.push((names[2].clone(), random_tensor(rng, vec![out_c], (-0.5, 0.5))));
                        params.push((names[3].clone(), random_tensor(rng, vec![out_c], (0.5, 2.0))));
                        layers.push(LayerSpec::BatchNorm2d {
                            channels: out_c,
                            epsilon: 1e-5,
                            gamma: names[0].clone(),
                            beta: names[1].clone(),
                            running_mean: names[2].clone(),
                            running_var: names[3].clone(),
                        });
                    }
                }
                1 | 2 => {
                    let window = 2 + rng.next_below(2.min(h.min(w) - 1));
                    let stride = 1 + rng.next_below(2);
                    if kind == 1 {
                        layers.push(LayerSpec::MaxPool2d { window, stride });
                    } else {
                        layers.push(LayerSpec::AvgPool2d { window, stride });
                    }
                    shape = vec![c, (h - window) / stride + 1, (w - window) / stride + 1];
                }
                3 => layers.push(LayerSpec::Relu),
                4 => layers.push(LayerSpec::LeakyRelu {
                    alpha: rng.next_range(0.05, 0.3),
                }),
                _ => {
                    layers.push(LayerSpec::Flatten);
                    shape = vec![c * h * w];
                }
            }
        } else {
            // flat: 0 dense, 1 relu, 2 leaky
            match rng.next_below(3) {
                0 => {
                    let out_f = 1 + rng.next_below(8);
                    let in_f = shape[0];
                    let weight = random_tensor(rng, vec![out_f, in_f], cfg.weight_range);
                    let bias = bias_tensor(rng, out_f, cfg);
                    let wname = format!("w{li}");
                    let bname = format!("b{li}");
                    params.push((wname.clone(), weight));
                    params.push((bname.clone(), bias));
                    layers.push(LayerSpec::Dense {
                        in_features: in_f,
                        out_features: out_f,
                        weight: wname,
                        bias: bname,
                    });
                    shape = vec![out_f];
                }
                1 => layers.push(LayerSpec::Relu),
                _ => layers.push(LayerSpec::LeakyRelu {
                    alpha: rng.next_range(0.05, 0.3),
                }),
            }
        }
    }

    if shape.len() == 3 {
        layers.push(LayerSpec::Flatten);
        shape = vec![shape.iter().product()];
    }
    let head_w = random_tensor(rng, vec![1, shape[0]], cfg.weight_range);
    let head_b = bias_tensor(rng, 1, cfg);
    params.push((String::from("head_w"), head_w));
    params.push((String::from("head_b"), head_b));
    layers.push(LayerSpec::Dense {
        in_features: shape[0],
        out_features: 1,
        weight: String::from("head_w"),
        bias: String::from("head_b"),
    });
    layers.push(LayerSpec::Sigmoid);

    let mut model = NetworkModel::new(input_shape, layers);
    for (name, tensor) in params {
        model.params.insert(name, tensor);
    }
    debug_assert!(model.validate().is_ok());
    model
}

/// Explicit dense-matrix form of a convolution: row j of the weight matrix
/// holds the kernel taps of output neuron j at their flat input positions and
/// zeros elsewhere, and the bias repeats per output channel. Propagating or
/// evaluating through this matrix must agree with the convolution itself.
pub fn unroll_conv(
    weight: &Tensor,
    bias: &Tensor,
    input_shape: (usize, usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> (Tensor, Tensor) {
    let (c_in, h, w) = input_shape;
    let out_channels = weight.shape()[0];
    let (kh, kw) = (weight.shape()[2], weight.shape()[3]);
    let oh = (h + 2 * padding.0 - kh) / stride.0 + 1;
    let ow = (w + 2 * padding.1 - kw) / stride.1 + 1;
    let rows = out_channels * oh * ow;
    let cols = c_in * h * w;

    let mut m = vec![0.0; rows * cols];
    let mut b = vec![0.0; rows];
    for o in 0..out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (o * oh + oy) * ow + ox;
                b[row] = bias.data()[o];
                for c in 0..c_in {
                    for ky in 0..kh {
                        let iy = (oy * stride.0 + ky) as isize - padding.0 as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride.1 + kx) as isize - padding.1 as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let col = (c * h + iy as usize) * w + ix as usize;
                            m[row * cols + col] =
                                weight.data()[((o * c_in + c) * kh + ky) * kw + kx];
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(vec![rows, cols], m).expect("finite weights"),
        Tensor::new(vec![rows], b).expect("finite biases"),
    )
}
