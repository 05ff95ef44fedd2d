//! Relevance-propagation engine for GAN discriminators.
//!
//! Explains a discriminator's verdict on one image by propagating its output
//! probability backwards through the network, split into a positive branch
//! (contributions towards "real") and a negative branch (towards "fake"),
//! with explicit conservation accounting at every layer. Around that core sit
//! a small tensor type, a deterministic inference engine with activation
//! recording, heatmap rendering, and a diagnostics toolkit for hunting data
//! preparation faults such as zero-padded augmentation backgrounds.
//!
//! The crate is `no_std` (alloc only); file formats, image IO and the CLI
//! live in the companion `polarlrp-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod augment;
pub mod diagnostics;
pub mod inference;
pub mod lrp;
pub mod model;
pub mod render;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use augment::{augment_image, AugmentOp, Padding};
pub use diagnostics::{
    compare_trajectory, detect_phantom_boundary, histogram_divergence, psnr, radial_profile,
    region_histogram, ssim, BoundaryReport, Divergence, RadialProfile, Rect, Region,
    RegionHistogram, TrajectoryPoint,
};
pub use inference::{forward, run_layers, score, ActivationTrace};
pub use lrp::{
    conservation_report, explain, propagate_layer, InitialRelevance, LrpOptions, Polarity,
    PolarityChoice, RelevanceMap,
};
pub use model::{LayerSpec, NetworkModel};
pub use render::{render_heatmap, render_side_by_side, Colormap, HeatmapConfig, Raster};
pub use tensor::Tensor;
