//! Subcommand implementations. Each function loads its inputs, runs the
//! corresponding engine operations, writes the requested artifacts, and
//! returns the process exit code (0 success, 3 detection-positive in
//! `detect-boundary --check`). Data and model failures bubble up as errors
//! and exit with code 2; nothing is written before the computation succeeds.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use polarlrp_core::augment::{augment_image, AugmentOp, Padding};
use polarlrp_core::diagnostics::{
    self, compare_trajectory, detect_boundary_in_values, histogram_divergence, region_histogram,
    Region,
};
use polarlrp_core::inference::forward;
use polarlrp_core::lrp::{
    explain_trace, InitialRelevance, LrpOptions, Polarity, PolarityChoice,
};
use polarlrp_core::render::{
    render_heatmap, render_side_by_side, Colormap, HeatmapConfig, Raster,
};
use polarlrp_core::rng::SeededRng;
use polarlrp_core::synth::random_input;
use polarlrp_core::tensor::Tensor;

use crate::imageio::{load_image, save_raster, tensor_to_raster};
use crate::manifest::{load_model, load_tensors, save_tensors};
use crate::report::{
    radial_profile_csv, trajectory_csv, BoundaryJson, DiagnoseReport, DivergenceJson,
    ExplainSidecar, MetricsReport, RegionHistogramJson, VerifyReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolarityArg {
    Auto,
    Positive,
    Negative,
}

impl From<PolarityArg> for PolarityChoice {
    fn from(p: PolarityArg) -> Self {
        match p {
            PolarityArg::Auto => PolarityChoice::Auto,
            PolarityArg::Positive => PolarityChoice::Fixed(Polarity::Positive),
            PolarityArg::Negative => PolarityChoice::Fixed(Polarity::Negative),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Prob,
    One,
    Logit,
}

impl From<InitArg> for InitialRelevance {
    fn from(i: InitArg) -> Self {
        match i {
            InitArg::Prob => InitialRelevance::Probability,
            InitArg::One => InitialRelevance::One,
            InitArg::Logit => InitialRelevance::Logit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ColormapArg {
    Grayscale,
    Heat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PadArg {
    Zero,
    Noise,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model manifest (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Weights blob (raw little-endian f32).
    #[arg(long)]
    pub weights: PathBuf,
}

#[derive(Debug, Args)]
pub struct LrpArgs {
    /// Propagation branch; auto follows the verdict at the 0.5 threshold.
    #[arg(long, value_enum, default_value_t = PolarityArg::Auto)]
    pub polarity: PolarityArg,
    /// Relevance injected at the output neuron.
    #[arg(long = "init-relevance", value_enum, default_value_t = InitArg::Prob)]
    pub init_relevance: InitArg,
}

impl LrpArgs {
    fn options(&self) -> LrpOptions {
        LrpOptions {
            polarity: self.polarity.into(),
            initial: self.init_relevance.into(),
            denominator_epsilon: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long, value_enum, default_value_t = ColormapArg::Grayscale)]
    pub colormap: ColormapArg,
    /// Percentile of positive relevance used as the clip point, in (50,100].
    #[arg(long, default_value_t = 99.0)]
    pub clip: f64,
    /// Output size HxW, e.g. 256x256 (upscale only).
    #[arg(long, value_parser = parse_size)]
    pub size: Option<(usize, usize)>,
}

impl RenderArgs {
    fn config(&self) -> HeatmapConfig {
        HeatmapConfig {
            colormap: match self.colormap {
                ColormapArg::Grayscale => Colormap::Grayscale,
                ColormapArg::Heat => Colormap::Heat,
            },
            clip_percentile: self.clip,
            output_size: self.size,
        }
    }
}

pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got '{s}'"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in '{s}'"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in '{s}'"))?;
    Ok((h, w))
}

pub fn parse_region(s: &str) -> Result<Region, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(format!("expected x,y,w,h, got '{s}'"));
    }
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad region component in '{s}'")))
        .collect::<Result<_, _>>()?;
    Ok(Region {
        x: nums[0],
        y: nums[1],
        w: nums[2],
        h: nums[3],
    })
}

/// `flipH | flipV | rotate:<deg> | translate:<dx>,<dy> | scale:<factor>`
pub fn parse_op(s: &str) -> Result<AugmentOp, String> {
    let (name, rest) = match s.split_once(':') {
        Some((n, r)) => (n, Some(r)),
        None => (s, None),
    };
    match (name, rest) {
        ("flipH", None) => Ok(AugmentOp::FlipH),
        ("flipV", None) => Ok(AugmentOp::FlipV),
        ("rotate", Some(deg)) => Ok(AugmentOp::Rotate {
            degrees: deg.parse().map_err(|_| format!("bad angle in '{s}'"))?,
        }),
        ("translate", Some(xy)) => {
            let (dx, dy) = xy
                .split_once(',')
                .ok_or_else(|| format!("expected translate:<dx>,<dy>, got '{s}'"))?;
            Ok(AugmentOp::Translate {
                dx: dx.parse().map_err(|_| format!("bad dx in '{s}'"))?,
                dy: dy.parse().map_err(|_| format!("bad dy in '{s}'"))?,
            })
        }
        ("scale", Some(f)) => Ok(AugmentOp::Scale {
            factor: f.parse().map_err(|_| format!("bad factor in '{s}'"))?,
        }),
        _ => Err(format!(
            "unknown op '{s}'; expected flipH, flipV, rotate:<deg>, translate:<dx>,<dy>, scale:<f>"
        )),
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>, stdout: bool) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(path) = out {
        fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    if stdout || out.is_none() {
        print!("{text}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// explain
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct ExplainCmd {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Input image (PNG or PGM, 8-bit grayscale or RGB).
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub lrp: LrpArgs,
    #[command(flatten)]
    pub render: RenderArgs,
    /// Heatmap output path (.png or .pgm); the JSON sidecar lands next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Also export the raw relevance map as a tensor container
    /// (<path>.json + <path>.bin).
    #[arg(long = "raw-out")]
    pub raw_out: Option<PathBuf>,
    /// Print the sidecar JSON to stdout as well.
    #[arg(long)]
    pub json: bool,
}

pub fn cmd_explain(args: &ExplainCmd) -> Result<i32> {
    let model = load_model(&args.model.model, &args.model.weights)?;
    let image = load_image(&args.image)?;
    let trace = forward(&model, &image)?;
    let map = explain_trace(&model, &trace, &args.lrp.options())?;
    let raster = render_heatmap(&map, &args.render.config())?;

    save_raster(&args.out, &raster)?;
    let sidecar = ExplainSidecar::new(trace.final_output, &map);
    let sidecar_path = args.out.with_extension("json");
    write_json(&sidecar, Some(&sidecar_path), args.json)?;

    if let Some(raw) = &args.raw_out {
        let mut meta = BTreeMap::new();
        meta.insert("polarity".to_string(), map.polarity.name().to_string());
        meta.insert("score".to_string(), trace.final_output.to_string());
        meta.insert(
            "initial_relevance".to_string(),
            map.initial_relevance.to_string(),
        );
        meta.insert(
            "leaked_relevance".to_string(),
            map.leaked_relevance.to_string(),
        );
        save_tensors(
            &raw.with_extension("json"),
            &raw.with_extension("bin"),
            &[("relevance", &map.values)],
            meta,
        )?;
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// trajectory
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct TrajectoryCmd {
    /// Directory of checkpoint subdirectories named by iteration number,
    /// each holding model.json + model.bin.
    #[arg(long)]
    pub checkpoints: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub lrp: LrpArgs,
    #[command(flatten)]
    pub render: RenderArgs,
    /// Output directory for heatmaps, the panel, and trajectory.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Radial profile annulus width in pixels.
    #[arg(long = "bin-width", default_value_t = 2.0)]
    pub bin_width: f64,
}

pub fn cmd_trajectory(args: &TrajectoryCmd) -> Result<i32> {
    let mut numbered: Vec<(u64, PathBuf)> = Vec::new();
    let entries = fs::read_dir(&args.checkpoints)
        .with_context(|| format!("reading {}", args.checkpoints.display()))?;
    for entry in entries {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        match name.parse::<u64>() {
            Ok(iter) => numbered.push((iter, entry.path())),
            Err(_) => eprintln!("warning: skipping non-numeric checkpoint directory '{name}'"),
        }
    }
    numbered.sort_by_key(|(iter, _)| *iter);
    if numbered.len() < 2 {
        bail!(
            "trajectory needs at least 2 numeric checkpoint directories, found {}",
            numbered.len()
        );
    }

    let mut models = Vec::with_capacity(numbered.len());
    for (iter, dir) in &numbered {
        let mut model = load_model(&dir.join("model.json"), &dir.join("model.bin"))
            .with_context(|| format!("checkpoint {iter}"))?;
        model
            .metadata
            .insert("iteration".to_string(), iter.to_string());
        models.push(model);
    }
    let image = load_image(&args.image)?;
    let points = compare_trajectory(&models, &image, &args.lrp.options(), args.bin_width)?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let config = args.render.config();
    let mut rasters: Vec<Raster> = Vec::with_capacity(points.len());
    let mut labels: Vec<String> = Vec::with_capacity(points.len());
    for point in &points {
        let raster = render_heatmap(&point.map, &config)?;
        save_raster(&args.out.join(format!("heatmap_{}.png", point.tag)), &raster)?;
        labels.push(format!("{} ({:.3})", point.tag, point.score));
        rasters.push(raster);
    }
    let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    let panel = render_side_by_side(&rasters, &label_refs)?;
    save_raster(&args.out.join("panel.png"), &panel)?;
    fs::write(args.out.join("trajectory.csv"), trajectory_csv(&points))?;
    for point in &points {
        fs::write(
            args.out.join(format!("radial_{}.csv", point.tag)),
            radial_profile_csv(&point.profile),
        )?;
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// diagnose-background
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct DiagnoseCmd {
    #[arg(long)]
    pub image: PathBuf,
    /// Region x,y,w,h in source pixels; repeatable.
    #[arg(long = "region", value_parser = parse_region, required = true)]
    pub regions: Vec<Region>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the report to stdout even when --out is given.
    #[arg(long)]
    pub json: bool,
}

pub fn cmd_diagnose(args: &DiagnoseCmd) -> Result<i32> {
    let image = load_image(&args.image)?;
    let mut histograms = Vec::with_capacity(args.regions.len());
    for region in &args.regions {
        histograms.push(region_histogram(&image, *region)?);
    }
    let mut divergences = Vec::new();
    for i in 0..histograms.len() {
        for j in i + 1..histograms.len() {
            if histograms[i].count == histograms[j].count {
                let d = histogram_divergence(&histograms[i], &histograms[j])?;
                divergences.push(DivergenceJson::new(i, j, &d));
            }
        }
    }
    let report = DiagnoseReport {
        regions: histograms.iter().map(RegionHistogramJson::from).collect(),
        divergences,
    };
    write_json(&report, args.out.as_deref(), args.json)?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// detect-boundary
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct DetectBoundaryCmd {
    /// Images to explain (requires --model/--weights) or exported relevance
    /// containers (.json).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Model manifest, needed when inputs are images.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Weights blob, needed when inputs are images.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Minimum robust z-score for each rectangle side.
    #[arg(long, default_value_t = 4.0)]
    pub threshold: f64,
    /// Exit with code 3 when a boundary is detected.
    #[arg(long)]
    pub check: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

pub fn cmd_detect_boundary(args: &DetectBoundaryCmd) -> Result<i32> {
    let model = match (&args.model, &args.weights) {
        (Some(m), Some(w)) => Some(load_model(m, w)?),
        (None, None) => None,
        _ => bail!("--model and --weights must be given together"),
    };
    // The artifact shows up in positive maps; a fixed unit injection keeps
    // every map on the same scale before averaging.
    let opts = LrpOptions {
        polarity: PolarityChoice::Fixed(Polarity::Positive),
        initial: InitialRelevance::One,
        denominator_epsilon: None,
    };

    let mut values: Vec<Tensor> = Vec::with_capacity(args.inputs.len());
    for input in &args.inputs {
        let is_container = input
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_container {
            let (tensors, _) = load_tensors(input, None)?;
            let (_, tensor) = tensors
                .into_iter()
                .next()
                .with_context(|| format!("{}: container holds no tensors", input.display()))?;
            values.push(tensor);
        } else {
            let model = model
                .as_ref()
                .context("explaining images requires --model and --weights")?;
            let image = load_image(input)?;
            let trace = forward(model, &image)?;
            values.push(explain_trace(model, &trace, &opts)?.values);
        }
    }

    let refs: Vec<&Tensor> = values.iter().collect();
    let report = detect_boundary_in_values(&refs, args.threshold)?;
    let detected = report.detected.is_some();
    write_json(&BoundaryJson::from(&report), args.out.as_deref(), args.json)?;
    Ok(if detected && args.check { 3 } else { 0 })
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct AugmentCmd {
    #[arg(long)]
    pub image: PathBuf,
    /// Perturbation, repeatable and applied in order:
    /// flipH | flipV | rotate:<deg> | translate:<dx>,<dy> | scale:<f>.
    #[arg(long = "op", value_parser = parse_op)]
    pub ops: Vec<AugmentOp>,
    /// Fill for pixels the warp uncovers.
    #[arg(long, value_enum, default_value_t = PadArg::Zero)]
    pub pad: PadArg,
    #[arg(long = "noise-mu", default_value_t = 0.02)]
    pub noise_mu: f64,
    #[arg(long = "noise-sigma", default_value_t = 0.01)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output image path (.png or .pgm).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_augment(args: &AugmentCmd) -> Result<i32> {
    let image = load_image(&args.image)?;
    let padding = match args.pad {
        PadArg::Zero => Padding::Zero,
        PadArg::Noise => Padding::Noise {
            mu: args.noise_mu,
            sigma: args.noise_sigma,
            seed: args.seed,
        },
    };
    let result = augment_image(&image, &args.ops, &padding)?;
    save_raster(&args.out, &tensor_to_raster(&result)?)?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct MetricsCmd {
    /// Reference image.
    pub a: PathBuf,
    /// Comparison image.
    pub b: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

pub fn cmd_metrics(args: &MetricsCmd) -> Result<i32> {
    let a = load_image(&args.a)?;
    let b = load_image(&args.b)?;
    let report = MetricsReport {
        psnr_db: diagnostics::psnr(&a, &b)?.into(),
        ssim: diagnostics::ssim(&a, &b)?,
        mse: diagnostics::mse(&a, &b)?,
    };
    write_json(&report, args.out.as_deref(), args.json)?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct VerifyCmd {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of seeded random inputs to explain.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = PolarityArg::Auto)]
    pub polarity: PolarityArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

pub fn cmd_verify(args: &VerifyCmd) -> Result<i32> {
    let model = load_model(&args.model.model, &args.model.weights)?;
    let opts = LrpOptions {
        polarity: args.polarity.into(),
        initial: InitialRelevance::Probability,
        denominator_epsilon: None,
    };
    let mut rng = SeededRng::new(args.seed);
    let mut worst_residual = 0.0f64;
    let mut worst_leak = 0.0f64;
    let mut min_score = f64::INFINITY;
    let mut max_score = f64::NEG_INFINITY;

    for _ in 0..args.trials {
        let input = random_input(&mut rng, &model.input_shape, 0.0, 1.0);
        let trace = forward(&model, &input)?;
        let map = explain_trace(&model, &trace, &opts)?;
        let denom = map.initial_relevance.max(1e-12);
        for flow in &map.flows {
            let residual = (flow.sum_before - flow.sum_after - flow.leaked).abs() / denom;
            worst_residual = worst_residual.max(residual);
        }
        worst_leak = worst_leak.max(map.leaked_relevance / denom);
        min_score = min_score.min(trace.final_output);
        max_score = max_score.max(trace.final_output);
    }

    let report = VerifyReport {
        trials: args.trials,
        seed: args.seed,
        worst_layer_residual: worst_residual,
        worst_relative_leakage: worst_leak,
        min_score,
        max_score,
    };
    write_json(&report, args.out.as_deref(), args.json)?;
    Ok(0)
}
