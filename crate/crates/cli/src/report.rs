//! JSON report schemas and CSV writers for the CLI outputs.

use serde::Serialize;

use polarlrp_core::diagnostics::{
    BoundaryReport, Divergence, RadialProfile, RegionHistogram, TrajectoryPoint,
};
use polarlrp_core::lrp::RelevanceMap;

/// f64 that serializes infinities as the string sentinel "inf" so reports
/// stay valid JSON.
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(untagged)]
pub enum JsonReal {
    Finite(f64),
    Sentinel(&'static str),
}

impl From<f64> for JsonReal {
    fn from(v: f64) -> Self {
        if v.is_finite() {
            JsonReal::Finite(v)
        } else if v > 0.0 {
            JsonReal::Sentinel("inf")
        } else {
            JsonReal::Sentinel("-inf")
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ExplainSidecar {
    pub score: f64,
    pub polarity: String,
    pub initial_relevance: f64,
    pub leaked_relevance: f64,
    pub per_layer_sums: Vec<f64>,
}

impl ExplainSidecar {
    pub fn new(score: f64, map: &RelevanceMap) -> Self {
        ExplainSidecar {
            score,
            polarity: map.polarity.name().to_string(),
            initial_relevance: map.initial_relevance,
            leaked_relevance: map.leaked_relevance,
            per_layer_sums: map.per_layer_sums.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RegionJson {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Serialize)]
pub struct RegionHistogramJson {
    pub region: RegionJson,
    pub bins: Vec<u64>,
    pub count: usize,
}

impl From<&RegionHistogram> for RegionHistogramJson {
    fn from(h: &RegionHistogram) -> Self {
        RegionHistogramJson {
            region: RegionJson {
                x: h.region.x,
                y: h.region.y,
                w: h.region.w,
                h: h.region.h,
            },
            bins: h.bins.clone(),
            count: h.count,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct DivergenceJson {
    /// Indices into the `regions` array.
    pub a: usize,
    pub b: usize,
    pub chi_square: f64,
    pub max_bin_gap: f64,
    pub ks: f64,
}

impl DivergenceJson {
    pub fn new(a: usize, b: usize, d: &Divergence) -> Self {
        DivergenceJson {
            a,
            b,
            chi_square: d.chi_square,
            max_bin_gap: d.max_bin_gap,
            ks: d.ks,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct DiagnoseReport {
    pub regions: Vec<RegionHistogramJson>,
    pub divergences: Vec<DivergenceJson>,
}

#[derive(Debug, Serialize)]
pub struct RectJson {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

#[derive(Debug, Serialize)]
pub struct BoundaryJson {
    pub detected: bool,
    pub rect: Option<RectJson>,
    pub score: JsonReal,
    pub threshold: f64,
    pub row_scores: Vec<JsonReal>,
    pub col_scores: Vec<JsonReal>,
}

impl From<&BoundaryReport> for BoundaryJson {
    fn from(r: &BoundaryReport) -> Self {
        BoundaryJson {
            detected: r.detected.is_some(),
            rect: r.detected.map(|rect| RectJson {
                top: rect.top,
                left: rect.left,
                bottom: rect.bottom,
                right: rect.right,
            }),
            score: r.score.into(),
            threshold: r.threshold,
            row_scores: r.row_scores.iter().map(|&z| z.into()).collect(),
            col_scores: r.col_scores.iter().map(|&z| z.into()).collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct MetricsReport {
    pub psnr_db: JsonReal,
    pub ssim: f64,
    pub mse: f64,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub trials: usize,
    pub seed: u64,
    /// Worst |sum_before - sum_after - leaked| across all layers and trials,
    /// relative to the injected relevance.
    pub worst_layer_residual: f64,
    /// Largest total leakage observed, relative to the injected relevance.
    pub worst_relative_leakage: f64,
    pub min_score: f64,
    pub max_score: f64,
}

/// CSV table for a trajectory run: one row per checkpoint, radial profile
/// mass in trailing columns.
pub fn trajectory_csv(points: &[TrajectoryPoint]) -> String {
    let bins = points.iter().map(|p| p.profile.mass.len()).max().unwrap_or(0);
    let mut out = String::from("iteration,score");
    for b in 0..bins {
        out.push_str(&format!(",bin{b}"));
    }
    out.push('\n');
    for p in points {
        out.push_str(&format!("{},{}", p.tag, p.score));
        for b in 0..bins {
            let mass = p.profile.mass.get(b).copied().unwrap_or(0.0);
            out.push_str(&format!(",{mass}"));
        }
        out.push('\n');
    }
    out
}

/// CSV table of one radial profile: header row, one row per annulus.
pub fn radial_profile_csv(profile: &RadialProfile) -> String {
    let mut out = String::from("bin,inner_radius,outer_radius,mass\n");
    for (i, mass) in profile.mass.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            i,
            i as f64 * profile.bin_width,
            (i + 1) as f64 * profile.bin_width,
            mass
        ));
    }
    out
}
