//! Image perturbation replay: flips, rotation, displacement and scaling on a
//! fixed canvas, with configurable filling of the pixels the warp uncovers.
//!
//! The ops compose into a single affine transform which is sampled once with
//! bilinear interpolation (pure flips and integer shifts land on exact pixel
//! centers, so they stay lossless). Uncovered pixels are filled at the end,
//! either with exact zeros or with seeded Gaussian noise clamped to [0,1] --
//! the two padding regimes whose statistical gap this toolkit diagnoses.

use alloc::vec::Vec;

use crate::rng::SeededRng;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentOp {
    FlipH,
    FlipV,
    /// Rotation about the image center. Positive angles rotate in the
    /// mathematically positive sense of the y-down pixel frame, which appears
    /// clockwise on screen.
    Rotate { degrees: f64 },
    /// Shifts content by (dx, dy) pixels; positive dx moves content right.
    Translate { dx: f64, dy: f64 },
    /// Zooms about the image center; factors below 1 shrink the content and
    /// expose a border. Must be positive.
    Scale { factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Padding {
    Zero,
    Noise { mu: f64, sigma: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum AugmentError {
    NotImage { rank: usize },
    BadScale { factor: f64 },
    Tensor(TensorError),
}

impl core::fmt::Display for AugmentError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            AugmentError::NotImage { rank } => {
                write!(f, "augmentation expects a [C,H,W] image, got rank {rank}")
            }
            AugmentError::BadScale { factor } => {
                write!(f, "scale factor must be positive, got {factor}")
            }
            AugmentError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for AugmentError {}

/// Row-major 2x3 affine matrix acting on (x, y) pixel coordinates.
#[derive(Debug, Clone, Copy)]
struct Affine {
    m: [f64; 6],
}

impl Affine {
    const IDENTITY: Affine = Affine {
        m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    };

    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m[0] * x + self.m[1] * y + self.m[2],
            self.m[3] * x + self.m[4] * y + self.m[5],
        )
    }

    /// `self ∘ rhs`: the returned transform applies `rhs` first.
    fn after(&self, rhs: &Affine) -> Affine {
        let a = &self.m;
        let b = &rhs.m;
        Affine {
            m: [
                a[0] * b[0] + a[1] * b[3],
                a[0] * b[1] + a[1] * b[4],
                a[0] * b[2] + a[1] * b[5] + a[2],
                a[3] * b[0] + a[4] * b[3],
                a[3] * b[1] + a[4] * b[4],
                a[3] * b[2] + a[4] * b[5] + a[5],
            ],
        }
    }
}

/// Inverse transform of one op: maps an output coordinate to the source
/// coordinate it samples from.
fn inverse_of(op: &AugmentOp, w: usize, h: usize) -> Result<Affine, AugmentError> {
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    Ok(match *op {
        AugmentOp::FlipH => Affine {
            m: [-1.0, 0.0, w as f64 - 1.0, 0.0, 1.0, 0.0],
        },
        AugmentOp::FlipV => Affine {
            m: [1.0, 0.0, 0.0, 0.0, -1.0, h as f64 - 1.0],
        },
        AugmentOp::Rotate { degrees } => {
            let theta = -degrees * core::f64::consts::PI / 180.0;
            let (s, c) = (libm::sin(theta), libm::cos(theta));
            Affine {
                m: [
                    c,
                    -s,
                    cx - c * cx + s * cy,
                    s,
                    c,
                    cy - s * cx - c * cy,
                ],
            }
        }
        AugmentOp::Translate { dx, dy } => Affine {
            m: [1.0, 0.0, -dx, 0.0, 1.0, -dy],
        },
        AugmentOp::Scale { factor } => {
            if !factor.is_finite() || factor <= 0.0 {
                return Err(AugmentError::BadScale { factor });
            }
            let inv = 1.0 / factor;
            Affine {
                m: [inv, 0.0, cx - inv * cx, 0.0, inv, cy - inv * cy],
            }
        }
    })
}

/// Applies the ops in order and fills every pixel the composed warp leaves
/// uncovered according to the padding mode. The canvas size is preserved.
pub fn augment_image(
    image: &Tensor,
    ops: &[AugmentOp],
    padding: &Padding,
) -> Result<Tensor, AugmentError> {
    if image.rank() != 3 {
        return Err(AugmentError::NotImage { rank: image.rank() });
    }
    let (c_n, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);

    // src = inv(op_1) o inv(op_2) o ... o inv(op_n) applied to the output
    // coordinate; composing first keeps a single resampling step.
    let mut total = Affine::IDENTITY;
    for op in ops.iter().rev() {
        total = inverse_of(op, w, h)?.after(&total);
    }

    // Tolerance for samples that land a rounding error outside the source
    // box, e.g. cos(pi/2) not being exactly zero under a quarter turn.
    const COVERAGE_EPS: f64 = 1e-9;

    let xd = image.data();
    let mut out = Vec::with_capacity(image.len());
    let mut covered = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = total.apply(x as f64, y as f64);
            let inside = sx >= -COVERAGE_EPS
                && sx <= (w - 1) as f64 + COVERAGE_EPS
                && sy >= -COVERAGE_EPS
                && sy <= (h - 1) as f64 + COVERAGE_EPS;
            covered.push(inside);
        }
    }
    for c in 0..c_n {
        let plane = &xd[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                if !covered[y * w + x] {
                    out.push(0.0);
                    continue;
                }
                let (sx, sy) = total.apply(x as f64, y as f64);
                let sx = sx.clamp(0.0, (w - 1) as f64);
                let sy = sy.clamp(0.0, (h - 1) as f64);
                out.push(bilinear(plane, w, h, sx, sy));
            }
        }
    }

    match padding {
        Padding::Zero => {}
        Padding::Noise { mu, sigma, seed } => {
            let mut rng = SeededRng::new(*seed);
            for c in 0..c_n {
                for (i, &inside) in covered.iter().enumerate() {
                    if !inside {
                        out[c * h * w + i] = rng.next_gaussian(*mu, *sigma).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }

    Tensor::new(image.shape().to_vec(), out).map_err(AugmentError::Tensor)
}

fn bilinear(plane: &[f64], w: usize, h: usize, sx: f64, sy: f64) -> f64 {
    let x0 = libm::floor(sx) as usize;
    let y0 = libm::floor(sy) as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let v00 = plane[y0 * w + x0];
    let v01 = plane[y0 * w + x1];
    let v10 = plane[y1 * w + x0];
    let v11 = plane[y1 * w + x1];
    let top = v00 + (v01 - v00) * fx;
    let bottom = v10 + (v11 - v10) * fx;
    top + (bottom - top) * fy
}
