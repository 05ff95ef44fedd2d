//! Analysis toolkit over relevance maps and images: radial mass profiles,
//! training-trajectory comparison, background-region histogram divergence,
//! phantom-boundary detection, and image fidelity metrics.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::inference::{self, InferenceError};
use crate::lrp::{explain_trace, LrpError, LrpOptions, RelevanceMap};
use crate::model::NetworkModel;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum DiagnosticsError {
    ShapeMismatch { a: Vec<usize>, b: Vec<usize> },
    RegionOutOfBounds { detail: String },
    CountMismatch { a: usize, b: usize },
    BadBinWidth { got: f64 },
    BadThreshold { got: f64 },
    NotImage { rank: usize },
    NeedTwoCheckpoints { got: usize },
    NoMaps,
    Lrp(LrpError),
    Inference(InferenceError),
}

impl fmt::Display for DiagnosticsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiagnosticsError::ShapeMismatch { a, b } => {
                write!(f, "shape mismatch: {a:?} vs {b:?}")
            }
            DiagnosticsError::RegionOutOfBounds { detail } => write!(f, "{detail}"),
            DiagnosticsError::CountMismatch { a, b } => {
                write!(f, "histogram counts differ: {a} vs {b}")
            }
            DiagnosticsError::BadBinWidth { got } => {
                write!(f, "bin width must be >= 1, got {got}")
            }
            DiagnosticsError::BadThreshold { got } => {
                write!(f, "detection threshold must be positive, got {got}")
            }
            DiagnosticsError::NotImage { rank } => {
                write!(f, "expected an image-like tensor of rank 2 or 3, got rank {rank}")
            }
            DiagnosticsError::NeedTwoCheckpoints { got } => {
                write!(f, "trajectory comparison needs at least 2 checkpoints, got {got}")
            }
            DiagnosticsError::NoMaps => write!(f, "no relevance maps supplied"),
            DiagnosticsError::Lrp(e) => write!(f, "{e}"),
            DiagnosticsError::Inference(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for DiagnosticsError {}

impl From<LrpError> for DiagnosticsError {
    fn from(e: LrpError) -> Self {
        DiagnosticsError::Lrp(e)
    }
}

impl From<InferenceError> for DiagnosticsError {
    fn from(e: InferenceError) -> Self {
        DiagnosticsError::Inference(e)
    }
}

/// Collapses [C,H,W] to [H,W] by channel sum; passes [H,W] through and lifts
/// flat vectors to a one-row plane.
fn spatial_plane(t: &Tensor) -> Result<Tensor, DiagnosticsError> {
    match t.rank() {
        3 => Ok(t.sum_axis(0).expect("axis 0 of rank-3 tensor")),
        2 => Ok(t.clone()),
        1 => Ok(t.reshape(vec![1, t.len()]).expect("rank-1 reshape")),
        rank => Err(DiagnosticsError::NotImage { rank }),
    }
}

// ---------------------------------------------------------------------------
// Radial profiles
// ---------------------------------------------------------------------------

/// Relevance mass per annulus around a center, innermost first.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    /// (row, col) center in pixel coordinates.
    pub center: (f64, f64),
    pub bin_width: f64,
    pub mass: Vec<f64>,
    pub total_mass: f64,
}

/// Accrues each pixel's relevance to the annulus `floor(distance/bin_width)`.
/// The default center is the geometric image center.
pub fn radial_profile(
    map: &RelevanceMap,
    center: Option<(f64, f64)>,
    bin_width: f64,
) -> Result<RadialProfile, DiagnosticsError> {
    radial_profile_values(&map.values, center, bin_width)
}

pub fn radial_profile_values(
    values: &Tensor,
    center: Option<(f64, f64)>,
    bin_width: f64,
) -> Result<RadialProfile, DiagnosticsError> {
    if !bin_width.is_finite() || bin_width < 1.0 {
        return Err(DiagnosticsError::BadBinWidth { got: bin_width });
    }
    let plane = spatial_plane(values)?;
    let (h, w) = (plane.shape()[0], plane.shape()[1]);
    let center = center.unwrap_or(((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0));

    let corner = |r: f64, c: f64| {
        let dr = r - center.0;
        let dc = c - center.1;
        libm::sqrt(dr * dr + dc * dc)
    };
    let max_dist = corner(0.0, 0.0)
        .max(corner(0.0, (w.max(1) - 1) as f64))
        .max(corner((h.max(1) - 1) as f64, 0.0))
        .max(corner((h.max(1) - 1) as f64, (w.max(1) - 1) as f64));
    let bins = libm::floor(max_dist / bin_width) as usize + 1;

    let mut mass = vec![0.0; bins];
    let mut total = 0.0;
    for r in 0..h {
        for c in 0..w {
            let v = plane.data()[r * w + c];
            let dr = r as f64 - center.0;
            let dc = c as f64 - center.1;
            let bin = libm::floor(libm::sqrt(dr * dr + dc * dc) / bin_width) as usize;
            mass[bin.min(bins - 1)] += v;
            total += v;
        }
    }
    Ok(RadialProfile {
        center,
        bin_width,
        mass,
        total_mass: total,
    })
}

// ---------------------------------------------------------------------------
// Trajectory comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrajectoryPoint {
    pub tag: String,
    pub score: f64,
    pub map: RelevanceMap,
    pub profile: RadialProfile,
}

/// Explains the same input under successive training checkpoints.
///
/// Checkpoints are tagged from their `iteration` metadata entry when present,
/// falling back to the list index. Ordering is preserved.
pub fn compare_trajectory(
    checkpoints: &[NetworkModel],
    image: &Tensor,
    options: &LrpOptions,
    bin_width: f64,
) -> Result<Vec<TrajectoryPoint>, DiagnosticsError> {
    if checkpoints.len() < 2 {
        return Err(DiagnosticsError::NeedTwoCheckpoints {
            got: checkpoints.len(),
        });
    }
    for ck in &checkpoints[1..] {
        if ck.input_shape != checkpoints[0].input_shape {
            return Err(DiagnosticsError::ShapeMismatch {
                a: checkpoints[0].input_shape.clone(),
                b: ck.input_shape.clone(),
            });
        }
    }
    let mut points = Vec::with_capacity(checkpoints.len());
    for (i, model) in checkpoints.iter().enumerate() {
        let trace = inference::forward(model, image)?;
        let map = explain_trace(model, &trace, options)?;
        let profile = radial_profile(&map, None, bin_width)?;
        let tag = model
            .metadata
            .get("iteration")
            .cloned()
            .unwrap_or_else(|| i.to_string());
        points.push(TrajectoryPoint {
            tag,
            score: trace.final_output,
            map,
            profile,
        });
    }
    Ok(points)
}

// ---------------------------------------------------------------------------
// Region histograms and divergence
// ---------------------------------------------------------------------------

/// Axis-aligned pixel region: `x` is the column of the left edge, `y` the row
/// of the top edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// 256-bin histogram of 8-bit-quantized intensities over one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionHistogram {
    pub region: Region,
    pub bins: Vec<u64>,
    pub count: usize,
}

/// Histogram of `round(clamp(v,0,1) * 255)` over the region, channel-averaged
/// for multi-channel images.
pub fn region_histogram(
    image: &Tensor,
    region: Region,
) -> Result<RegionHistogram, DiagnosticsError> {
    let (channels, h, w) = match image.rank() {
        3 => (image.shape()[0], image.shape()[1], image.shape()[2]),
        2 => (1, image.shape()[0], image.shape()[1]),
        rank => return Err(DiagnosticsError::NotImage { rank }),
    };
    if region.x + region.w > w || region.y + region.h > h {
        return Err(DiagnosticsError::RegionOutOfBounds {
            detail: format!(
                "region {}x{} at ({},{}) exceeds image {}x{}",
                region.w, region.h, region.x, region.y, w, h
            ),
        });
    }
    let mut bins = vec![0u64; 256];
    let plane = h * w;
    for dy in 0..region.h {
        for dx in 0..region.w {
            let idx = (region.y + dy) * w + region.x + dx;
            let mut v = 0.0;
            for c in 0..channels {
                v += image.data()[c * plane + idx];
            }
            v /= channels as f64;
            let q = libm::round(v.clamp(0.0, 1.0) * 255.0) as usize;
            bins[q.min(255)] += 1;
        }
    }
    Ok(RegionHistogram {
        region,
        bins,
        count: region.w * region.h,
    })
}

/// Divergence statistics between two equal-count histograms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    /// Chi-square over bins with any mass: sum of (a-b)^2 / (a+b).
    pub chi_square: f64,
    /// Largest per-bin count gap, normalized by the pixel count.
    pub max_bin_gap: f64,
    /// Kolmogorov-Smirnov statistic over the bin CDFs (secondary statistic).
    pub ks: f64,
}

pub fn histogram_divergence(
    a: &RegionHistogram,
    b: &RegionHistogram,
) -> Result<Divergence, DiagnosticsError> {
    if a.count != b.count {
        return Err(DiagnosticsError::CountMismatch {
            a: a.count,
            b: b.count,
        });
    }
    let mut chi_square = 0.0;
    let mut max_gap = 0u64;
    let mut cum_a = 0u64;
    let mut cum_b = 0u64;
    let mut ks = 0.0f64;
    for i in 0..256 {
        let (na, nb) = (a.bins[i], b.bins[i]);
        if na + nb > 0 {
            let diff = na as f64 - nb as f64;
            chi_square += diff * diff / (na + nb) as f64;
        }
        max_gap = max_gap.max(na.abs_diff(nb));
        cum_a += na;
        cum_b += nb;
        if a.count > 0 {
            ks = ks.max((cum_a as f64 - cum_b as f64).abs() / a.count as f64);
        }
    }
    let max_bin_gap = if a.count > 0 {
        max_gap as f64 / a.count as f64
    } else {
        0.0
    };
    Ok(Divergence {
        chi_square,
        max_bin_gap,
        ks,
    })
}

// ---------------------------------------------------------------------------
// Phantom-boundary detection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryReport {
    pub row_scores: Vec<f64>,
    pub col_scores: Vec<f64>,
    pub detected: Option<Rect>,
    /// Minimum of the four side z-scores of the detected rectangle; 0 when
    /// no candidate exists.
    pub score: f64,
    pub threshold: f64,
}

/// Looks for an axis-aligned rectangle of anomalously bright lines in the
/// averaged maps: the signature a zero-padded augmentation background leaves
/// in positive relevance maps.
///
/// Lines are scored by a median/MAD z-score, computed separately for rows and
/// columns; the median absorbs a bright object core without masking thin
/// straight lines that span the image.
pub fn detect_phantom_boundary(
    maps: &[RelevanceMap],
    threshold: f64,
) -> Result<BoundaryReport, DiagnosticsError> {
    let values: Vec<&Tensor> = maps.iter().map(|m| &m.values).collect();
    detect_boundary_in_values(&values, threshold)
}

pub fn detect_boundary_in_values(
    values: &[&Tensor],
    threshold: f64,
) -> Result<BoundaryReport, DiagnosticsError> {
    if !threshold.is_finite() || threshold <= 0.0 {
        return Err(DiagnosticsError::BadThreshold { got: threshold });
    }
    let first = values.first().ok_or(DiagnosticsError::NoMaps)?;
    for v in values {
        if v.shape() != first.shape() {
            return Err(DiagnosticsError::ShapeMismatch {
                a: first.shape().to_vec(),
                b: v.shape().to_vec(),
            });
        }
    }

    let mut mean = spatial_plane(first)?.data().to_vec();
    for v in &values[1..] {
        for (acc, x) in mean.iter_mut().zip(spatial_plane(v)?.data()) {
            *acc += x;
        }
    }
    let inv = 1.0 / values.len() as f64;
    for m in &mut mean {
        *m *= inv;
    }
    let plane = spatial_plane(first)?;
    let (h, w) = (plane.shape()[0], plane.shape()[1]);

    let mut row_means = vec![0.0; h];
    let mut col_means = vec![0.0; w];
    for r in 0..h {
        for c in 0..w {
            let v = mean[r * w + c];
            row_means[r] += v;
            col_means[c] += v;
        }
    }
    for v in &mut row_means {
        *v /= w as f64;
    }
    for v in &mut col_means {
        *v /= h as f64;
    }

    let row_scores = robust_z(&row_means);
    let col_scores = robust_z(&col_means);

    let top2 = |scores: &[f64]| -> Option<(usize, usize)> {
        let mut qualifying: Vec<usize> = (0..scores.len())
            .filter(|&i| scores[i] >= threshold)
            .collect();
        if qualifying.len() < 2 {
            return None;
        }
        // highest z first; ties resolved by index for determinism
        qualifying.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .expect("finite z-scores")
                .then(a.cmp(&b))
        });
        let (a, b) = (qualifying[0], qualifying[1]);
        Some((a.min(b), a.max(b)))
    };

    let detected = match (top2(&row_scores), top2(&col_scores)) {
        (Some((top, bottom)), Some((left, right))) => Some(Rect {
            top,
            left,
            bottom,
            right,
        }),
        _ => None,
    };
    let score = detected
        .map(|r| {
            row_scores[r.top]
                .min(row_scores[r.bottom])
                .min(col_scores[r.left])
                .min(col_scores[r.right])
        })
        .unwrap_or(0.0);

    Ok(BoundaryReport {
        row_scores,
        col_scores,
        detected,
        score,
        threshold,
    })
}

/// Robust z-scores against the median and MAD. A vanishing MAD (more than
/// half the lines identical) falls back to a relative floor so that exact
/// repeats score 0 while real deviations score arbitrarily high.
fn robust_z(values: &[f64]) -> Vec<f64> {
    let med = median(values);
    let deviations: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&deviations);
    let scale = (1.4826 * mad)
        .max(1e-12 * med.abs())
        .max(f64::MIN_POSITIVE);
    values.iter().map(|v| (v - med) / scale).collect()
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

// ---------------------------------------------------------------------------
// Fidelity metrics
// ---------------------------------------------------------------------------

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64, DiagnosticsError> {
    if a.shape() != b.shape() {
        return Err(DiagnosticsError::ShapeMismatch {
            a: a.shape().to_vec(),
            b: b.shape().to_vec(),
        });
    }
    let n = a.len().max(1);
    let mut acc = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc / n as f64)
}

/// Peak signal-to-noise ratio in dB for values in [0,1]; +infinity when the
/// images are identical.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64, DiagnosticsError> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * libm::log10(m))
}

const SSIM_C1: f64 = 1e-4; // (0.01)^2
const SSIM_C2: f64 = 9e-4; // (0.03)^2
const SSIM_WINDOW: usize = 8;

/// Mean local SSIM over non-overlapping 8x8 windows (partial windows at the
/// right and bottom edges are included with their actual size), averaged over
/// channels. Symmetric in its arguments; identical images give exactly 1.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64, DiagnosticsError> {
    if a.shape() != b.shape() {
        return Err(DiagnosticsError::ShapeMismatch {
            a: a.shape().to_vec(),
            b: b.shape().to_vec(),
        });
    }
    let (channels, h, w) = match a.rank() {
        3 => (a.shape()[0], a.shape()[1], a.shape()[2]),
        2 => (1, a.shape()[0], a.shape()[1]),
        rank => return Err(DiagnosticsError::NotImage { rank }),
    };
    let plane = h * w;
    let mut total = 0.0;
    let mut windows = 0usize;
    for c in 0..channels {
        let pa = &a.data()[c * plane..(c + 1) * plane];
        let pb = &b.data()[c * plane..(c + 1) * plane];
        let mut y0 = 0;
        while y0 < h {
            let wh = SSIM_WINDOW.min(h - y0);
            let mut x0 = 0;
            while x0 < w {
                let ww = SSIM_WINDOW.min(w - x0);
                total += window_ssim(pa, pb, w, x0, y0, ww, wh);
                windows += 1;
                x0 += SSIM_WINDOW;
            }
            y0 += SSIM_WINDOW;
        }
    }
    Ok(total / windows.max(1) as f64)
}

fn window_ssim(pa: &[f64], pb: &[f64], stride: usize, x0: usize, y0: usize, ww: usize, wh: usize) -> f64 {
    let n = (ww * wh) as f64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for y in y0..y0 + wh {
        for x in x0..x0 + ww {
            let va = pa[y * stride + x];
            let vb = pb[y * stride + x];
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
        }
    }
    let mu_a = sa / n;
    let mu_b = sb / n;
    let var_a = saa / n - mu_a * mu_a;
    let var_b = sbb / n - mu_b * mu_b;
    let cov = sab / n - mu_a * mu_b;
    ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2))
}
