//! End-to-end checks of the `polarlrp` binary: exit codes, artifact layout,
//! sidecar contents, and the warning/error conventions.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use polarlrp_cli::imageio::save_raster;
use polarlrp_cli::manifest::save_model;
use polarlrp_core::model::{LayerSpec, NetworkModel};
use polarlrp_core::render::Raster;
use polarlrp_core::tensor::Tensor;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_polarlrp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

/// dense(2->1) with weights [2,-1], zero bias over a [1,1,2] image.
fn fixture_model() -> NetworkModel {
    NetworkModel::new(
        vec![1, 1, 2],
        vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                in_features: 2,
                out_features: 1,
                weight: "w".into(),
                bias: "b".into(),
            },
            LayerSpec::Sigmoid,
        ],
    )
    .with_param("w", Tensor::new(vec![1, 2], vec![2.0, -1.0]).unwrap())
    .with_param("b", Tensor::new(vec![1], vec![0.0]).unwrap())
}

fn write_fixture_model(dir: &Path) -> (PathBuf, PathBuf) {
    let manifest = dir.join("model.json");
    let weights = dir.join("model.bin");
    save_model(&fixture_model(), &manifest, &weights).unwrap();
    (manifest, weights)
}

fn write_ones_image(dir: &Path, name: &str) -> PathBuf {
    let path = dir.join(name);
    let raster = Raster {
        width: 2,
        height: 1,
        channels: 1,
        pixels: vec![255, 255],
    };
    save_raster(&path, &raster).unwrap();
    path
}

#[test]
fn usage_errors_exit_one_with_single_line_stderr() {
    let out = run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "stderr: {stderr}");
    assert!(stderr.starts_with("error: usage:"), "stderr: {stderr}");
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn explain_writes_heatmap_sidecar_and_raw_container() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, weights) = write_fixture_model(dir.path());
    let image = write_ones_image(dir.path(), "img.png");
    let out_png = dir.path().join("heat.png");
    let raw = dir.path().join("raw");

    let out = run(&[
        "explain",
        "--model",
        manifest.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--polarity",
        "auto",
        "--out",
        out_png.to_str().unwrap(),
        "--raw-out",
        raw.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_png.exists());
    assert!(dir.path().join("raw.json").exists());
    assert!(dir.path().join("raw.bin").exists());

    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("heat.json")).unwrap())
            .unwrap();
    // sigma(2 - 1) = 0.731: classified real
    assert_eq!(sidecar["polarity"], "positive");
    let score = sidecar["score"].as_f64().unwrap();
    assert!((score - 0.73106).abs() < 1e-5, "score {score}");
    assert_eq!(sidecar["initial_relevance"].as_f64().unwrap(), score);
    assert!(sidecar["per_layer_sums"].as_array().unwrap().len() == 4);
}

#[test]
fn explain_honors_size_clip_and_colormap_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, weights) = write_fixture_model(dir.path());
    let image = write_ones_image(dir.path(), "img.png");
    let out_png = dir.path().join("heat.png");

    let out = run(&[
        "explain",
        "--model",
        manifest.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--colormap",
        "heat",
        "--clip",
        "95",
        "--size",
        "64x128",
        "--out",
        out_png.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let (w, h) = image::image_dimensions(&out_png).unwrap();
    assert_eq!((h, w), (64, 128));
}

#[test]
fn explain_polarity_override_wins_over_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, weights) = write_fixture_model(dir.path());
    let image = write_ones_image(dir.path(), "img.png");
    let out_png = dir.path().join("heat.png");

    let out = run(&[
        "explain",
        "--model",
        manifest.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--polarity",
        "negative",
        "--out",
        out_png.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("heat.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["polarity"], "negative");
}

#[test]
fn missing_weights_exits_two_without_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = write_fixture_model(dir.path());
    let image = write_ones_image(dir.path(), "img.png");
    let out_png = dir.path().join("heat.png");

    let out = run(&[
        "explain",
        "--model",
        manifest.to_str().unwrap(),
        "--weights",
        dir.path().join("nope.bin").to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--out",
        out_png.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "stderr: {stderr}");
    assert!(stderr.starts_with("error: "));
    assert!(!out_png.exists(), "no partial outputs on failure");
    assert!(!dir.path().join("heat.json").exists());
}

#[test]
fn trajectory_produces_heatmaps_panel_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let ckpts = dir.path().join("ckpts");
    for iter in ["1000", "5000", "9000"] {
        let sub = ckpts.join(iter);
        std::fs::create_dir_all(&sub).unwrap();
        save_model(&fixture_model(), &sub.join("model.json"), &sub.join("model.bin")).unwrap();
    }
    // a stray directory that must be skipped with a warning
    std::fs::create_dir_all(ckpts.join("notes")).unwrap();
    let image = write_ones_image(dir.path(), "img.png");
    let outdir = dir.path().join("out");

    let out = run(&[
        "trajectory",
        "--checkpoints",
        ckpts.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--out",
        outdir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(
        stderr.contains("warning: skipping non-numeric checkpoint directory 'notes'"),
        "stderr: {stderr}"
    );
    for iter in ["1000", "5000", "9000"] {
        assert!(outdir.join(format!("heatmap_{iter}.png")).exists());
        assert!(outdir.join(format!("radial_{iter}.csv")).exists());
    }
    assert!(outdir.join("panel.png").exists());

    let csv = std::fs::read_to_string(outdir.join("trajectory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4, "header + 3 checkpoints: {csv}");
    assert!(lines[0].starts_with("iteration,score,bin0"));
    // identical checkpoints: rows differ only in the iteration tag
    let tail = |line: &str| line.split_once(',').unwrap().1.to_string();
    assert_eq!(tail(lines[1]), tail(lines[2]));
    assert_eq!(tail(lines[2]), tail(lines[3]));
    assert!(lines[1].starts_with("1000,"));
}

#[test]
fn trajectory_with_one_checkpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let ckpts = dir.path().join("ckpts");
    let sub = ckpts.join("100");
    std::fs::create_dir_all(&sub).unwrap();
    save_model(&fixture_model(), &sub.join("model.json"), &sub.join("model.bin")).unwrap();
    let image = write_ones_image(dir.path(), "img.png");

    let out = run(&[
        "trajectory",
        "--checkpoints",
        ckpts.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn metrics_of_identical_images_reports_ssim_one() {
    let dir = tempfile::tempdir().unwrap();
    let image = write_ones_image(dir.path(), "img.png");
    let out = run(&["metrics", image.to_str().unwrap(), image.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("stdout is a JSON report");
    assert_eq!(report["ssim"].as_f64().unwrap(), 1.0);
    assert_eq!(report["psnr_db"], "inf");
    assert_eq!(report["mse"].as_f64().unwrap(), 0.0);
}

#[test]
fn diagnose_background_reports_divergence() {
    let dir = tempfile::tempdir().unwrap();
    // left half black (padding-like), right half mid-gray
    let mut pixels = vec![0u8; 32 * 32];
    for y in 0..32 {
        for x in 16..32 {
            pixels[y * 32 + x] = 128;
        }
    }
    let img = dir.path().join("img.png");
    save_raster(
        &img,
        &Raster {
            width: 32,
            height: 32,
            channels: 1,
            pixels,
        },
    )
    .unwrap();

    let out = run(&[
        "diagnose-background",
        "--image",
        img.to_str().unwrap(),
        "--region",
        "0,0,8,8",
        "--region",
        "20,20,8,8",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["regions"].as_array().unwrap().len(), 2);
    let chi = report["divergences"][0]["chi_square"].as_f64().unwrap();
    assert_eq!(chi, 128.0, "disjoint constant regions give 2n");
}

#[test]
fn detect_boundary_check_mode_exits_three_on_rect_maps() {
    let dir = tempfile::tempdir().unwrap();
    // synthetic positive map with a bright rectangle outline
    let n = 32;
    let mut data = vec![0.01; n * n];
    for i in 6..=25 {
        data[6 * n + i] = 1.0;
        data[25 * n + i] = 1.0;
        data[i * n + 6] = 1.0;
        data[i * n + 25] = 1.0;
    }
    let map = Tensor::new(vec![1, n, n], data).unwrap();
    let container = dir.path().join("map.json");
    polarlrp_cli::manifest::save_tensors(
        &container,
        &dir.path().join("map.bin"),
        &[("relevance", &map)],
        Default::default(),
    )
    .unwrap();

    let out = run(&[
        "detect-boundary",
        "--check",
        "--threshold",
        "4.0",
        container.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["detected"], true);
    assert_eq!(report["rect"]["top"], 6);
    assert_eq!(report["rect"]["right"], 25);

    // uniform map: no detection, exit 0 even in check mode
    let flat = Tensor::filled(vec![1, n, n], 0.5).unwrap();
    let flat_container = dir.path().join("flat.json");
    polarlrp_cli::manifest::save_tensors(
        &flat_container,
        &dir.path().join("flat.bin"),
        &[("relevance", &flat)],
        Default::default(),
    )
    .unwrap();
    let out = run(&[
        "detect-boundary",
        "--check",
        flat_container.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn verify_reports_clean_conservation_for_bias_free_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, weights) = write_fixture_model(dir.path());
    let out = run(&[
        "verify",
        "--model",
        manifest.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
        "--trials",
        "100",
        "--polarity",
        "positive",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["worst_layer_residual"].as_f64().unwrap() <= 1e-9);
    assert_eq!(report["trials"], 100);
}

#[test]
fn augment_is_seed_deterministic_and_writes_padding() {
    let dir = tempfile::tempdir().unwrap();
    let mut pixels = vec![0u8; 16 * 16];
    for (i, p) in pixels.iter_mut().enumerate() {
        *p = ((i * 37) % 200) as u8 + 30;
    }
    let img = dir.path().join("img.png");
    save_raster(
        &img,
        &Raster {
            width: 16,
            height: 16,
            channels: 1,
            pixels,
        },
    )
    .unwrap();

    let run_augment = |out_name: &str| {
        let out_path = dir.path().join(out_name);
        let out = run(&[
            "augment",
            "--image",
            img.to_str().unwrap(),
            "--op",
            "translate:5,0",
            "--pad",
            "noise",
            "--seed",
            "42",
            "--out",
            out_path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        std::fs::read(&out_path).unwrap()
    };
    let a = run_augment("a.png");
    let b = run_augment("b.png");
    assert_eq!(a, b, "same seed must give byte-identical output");
}
