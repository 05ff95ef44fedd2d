//! Command-line front end and file formats for the relevance-propagation
//! engine: the model container (JSON manifest + f32 blob), PNG/PGM image IO,
//! JSON/CSV reports, and the `polarlrp` binary's subcommands.

use clap::error::ErrorKind;
use clap::Parser;

pub mod commands;
pub mod imageio;
pub mod manifest;
pub mod report;

use commands::{
    AugmentCmd, DetectBoundaryCmd, DiagnoseCmd, ExplainCmd, MetricsCmd, TrajectoryCmd, VerifyCmd,
};

#[derive(Debug, Parser)]
#[command(
    name = "polarlrp",
    version,
    about = "Relevance heatmaps and debugging diagnostics for GAN discriminators"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Subcommand)]
pub enum Command {
    /// Explain one verdict: heatmap, JSON sidecar, optional raw map export.
    Explain(ExplainCmd),
    /// Explain the same image under successive training checkpoints.
    Trajectory(TrajectoryCmd),
    /// Histogram background regions and measure their divergence.
    DiagnoseBackground(DiagnoseCmd),
    /// Look for padding rectangles in positive relevance maps.
    DetectBoundary(DetectBoundaryCmd),
    /// Replay flip/rotate/translate/scale perturbations with chosen padding.
    Augment(AugmentCmd),
    /// PSNR, SSIM and MSE between two images.
    Metrics(MetricsCmd),
    /// Run seeded random inputs through the explainer and report the worst
    /// conservation residual and leakage.
    Verify(VerifyCmd),
}

/// Parses arguments and dispatches; returns the process exit code
/// (0 success, 1 usage error, 2 data/model error, 3 detection-positive).
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let text = e.to_string();
            let first = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", first.trim_start_matches("error: ").trim());
            return 1;
        }
    };
    let result = match &cli.command {
        Command::Explain(args) => commands::cmd_explain(args),
        Command::Trajectory(args) => commands::cmd_trajectory(args),
        Command::DiagnoseBackground(args) => commands::cmd_diagnose(args),
        Command::DetectBoundary(args) => commands::cmd_detect_boundary(args),
        Command::Augment(args) => commands::cmd_augment(args),
        Command::Metrics(args) => commands::cmd_metrics(args),
        Command::Verify(args) => commands::cmd_verify(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}
