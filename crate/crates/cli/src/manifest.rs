//! The on-disk model container: a JSON manifest describing the architecture
//! plus a raw little-endian `f32` blob holding the parameters.
//!
//! The format is deliberately framework-free so a trainer can export a
//! checkpoint with a few dozen lines of script: the manifest lists layers and
//! tensor entries (name, shape, byte offset, byte length), and the blob is
//! nothing but the tensor values back to back at the declared offsets. The
//! same container carries exported relevance maps.
//!
//! Values are widened to `f64` on load, and every batch-norm layer is folded
//! into its preceding convolution so the propagation rules only ever see
//! affine, pooling, and activation layers.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use polarlrp_core::model::{LayerSpec, ModelError, NetworkModel};
use polarlrp_core::tensor::{Tensor, TensorError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelIoError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported manifest version {got}, expected {FORMAT_VERSION}")]
    Version { got: u32 },
    #[error("tensor '{name}': dtype '{got}' unsupported, expected f32")]
    Dtype { name: String, got: String },
    #[error("tensor '{name}': length {length} does not match shape {shape:?} (expected {expected} bytes)")]
    Length {
        name: String,
        shape: Vec<usize>,
        length: u64,
        expected: u64,
    },
    #[error("tensor '{name}': bytes {offset}..{end} exceed weights file of {file_len} bytes")]
    Bounds {
        name: String,
        offset: u64,
        end: u64,
        file_len: u64,
    },
    #[error("layer {layer} ({kind}): missing parameter role '{role}'")]
    MissingRole {
        layer: usize,
        kind: String,
        role: String,
    },
    #[error("duplicate tensor entry '{name}'")]
    DuplicateTensor { name: String },
    #[error("input_shape must have 1 to 3 extents, got {got}")]
    InputShape { got: usize },
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    version: u32,
    input_shape: Vec<usize>,
    layers: Vec<LayerEntry>,
    tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerEntry {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride_h: usize,
        stride_w: usize,
        pad_h: usize,
        pad_w: usize,
        params: BTreeMap<String, String>,
    },
    Dense {
        in_features: usize,
        out_features: usize,
        params: BTreeMap<String, String>,
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
        params: BTreeMap<String, String>,
    },
}

fn role<'a>(
    params: &'a BTreeMap<String, String>,
    layer: usize,
    kind: &str,
    name: &str,
) -> Result<&'a str, ModelIoError> {
    params
        .get(name)
        .map(String::as_str)
        .ok_or_else(|| ModelIoError::MissingRole {
            layer,
            kind: kind.to_string(),
            role: name.to_string(),
        })
}

fn layer_from_entry(idx: usize, entry: &LayerEntry) -> Result<LayerSpec, ModelIoError> {
    Ok(match entry {
        LayerEntry::Conv2d {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride_h,
            stride_w,
            pad_h,
            pad_w,
            params,
        } => LayerSpec::Conv2d {
            in_channels: *in_channels,
            out_channels: *out_channels,
            kernel: (*kernel_h, *kernel_w),
            stride: (*stride_h, *stride_w),
            padding: (*pad_h, *pad_w),
            weight: role(params, idx, "conv2d", "weight")?.to_string(),
            bias: role(params, idx, "conv2d", "bias")?.to_string(),
        },
        LayerEntry::Dense {
            in_features,
            out_features,
            params,
        } => LayerSpec::Dense {
            in_features: *in_features,
            out_features: *out_features,
            weight: role(params, idx, "dense", "weight")?.to_string(),
            bias: role(params, idx, "dense", "bias")?.to_string(),
        },
        LayerEntry::Relu => LayerSpec::Relu,
        LayerEntry::LeakyRelu { alpha } => LayerSpec::LeakyRelu { alpha: *alpha },
        LayerEntry::MaxPool2d { window, stride } => LayerSpec::MaxPool2d {
            window: *window,
            stride: *stride,
        },
        LayerEntry::AvgPool2d { window, stride } => LayerSpec::AvgPool2d {
            window: *window,
            stride: *stride,
        },
        LayerEntry::Flatten => LayerSpec::Flatten,
        LayerEntry::Sigmoid => LayerSpec::Sigmoid,
        LayerEntry::BatchNorm2d {
            channels,
            epsilon,
            params,
        } => LayerSpec::BatchNorm2d {
            channels: *channels,
            epsilon: *epsilon,
            gamma: role(params, idx, "batch_norm2d", "gamma")?.to_string(),
            beta: role(params, idx, "batch_norm2d", "beta")?.to_string(),
            running_mean: role(params, idx, "batch_norm2d", "running_mean")?.to_string(),
            running_var: role(params, idx, "batch_norm2d", "running_var")?.to_string(),
        },
    })
}

fn entry_from_layer(layer: &LayerSpec) -> LayerEntry {
    let params_of = |pairs: &[(&str, &String)]| {
        pairs
            .iter()
            .map(|(role, name)| (role.to_string(), (*name).clone()))
            .collect::<BTreeMap<_, _>>()
    };
    match layer {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight,
            bias,
        } => LayerEntry::Conv2d {
            in_channels: *in_channels,
            out_channels: *out_channels,
            kernel_h: kernel.0,
            kernel_w: kernel.1,
            stride_h: stride.0,
            stride_w: stride.1,
            pad_h: padding.0,
            pad_w: padding.1,
            params: params_of(&[("weight", weight), ("bias", bias)]),
        },
        LayerSpec::Dense {
            in_features,
            out_features,
            weight,
            bias,
        } => LayerEntry::Dense {
            in_features: *in_features,
            out_features: *out_features,
            params: params_of(&[("weight", weight), ("bias", bias)]),
        },
        LayerSpec::Relu => LayerEntry::Relu,
        LayerSpec::LeakyRelu { alpha } => LayerEntry::LeakyRelu { alpha: *alpha },
        LayerSpec::MaxPool2d { window, stride } => LayerEntry::MaxPool2d {
            window: *window,
            stride: *stride,
        },
        LayerSpec::AvgPool2d { window, stride } => LayerEntry::AvgPool2d {
            window: *window,
            stride: *stride,
        },
        LayerSpec::Flatten => LayerEntry::Flatten,
        LayerSpec::Sigmoid => LayerEntry::Sigmoid,
        LayerSpec::BatchNorm2d {
            channels,
            epsilon,
            gamma,
            beta,
            running_mean,
            running_var,
        } => LayerEntry::BatchNorm2d {
            channels: *channels,
            epsilon: *epsilon,
            params: params_of(&[
                ("gamma", gamma),
                ("beta", beta),
                ("running_mean", running_mean),
                ("running_var", running_var),
            ]),
        },
    }
}

fn decode_tensors(
    entries: &[TensorEntry],
    blob: &[u8],
) -> Result<BTreeMap<String, Tensor>, ModelIoError> {
    let mut tensors = BTreeMap::new();
    for entry in entries {
        if entry.dtype != "f32" {
            return Err(ModelIoError::Dtype {
                name: entry.name.clone(),
                got: entry.dtype.clone(),
            });
        }
        let count: usize = entry.shape.iter().product();
        let expected = 4 * count as u64;
        if entry.length != expected {
            return Err(ModelIoError::Length {
                name: entry.name.clone(),
                shape: entry.shape.clone(),
                length: entry.length,
                expected,
            });
        }
        let end = entry.offset.checked_add(entry.length).ok_or_else(|| {
            ModelIoError::Bounds {
                name: entry.name.clone(),
                offset: entry.offset,
                end: u64::MAX,
                file_len: blob.len() as u64,
            }
        })?;
        if end > blob.len() as u64 {
            return Err(ModelIoError::Bounds {
                name: entry.name.clone(),
                offset: entry.offset,
                end,
                file_len: blob.len() as u64,
            });
        }
        let bytes = &blob[entry.offset as usize..end as usize];
        let mut data = Vec::with_capacity(count);
        for chunk in bytes.chunks_exact(4) {
            data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
        }
        if tensors
            .insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?)
            .is_some()
        {
            return Err(ModelIoError::DuplicateTensor {
                name: entry.name.clone(),
            });
        }
    }
    Ok(tensors)
}

fn read_file(path: &Path) -> Result<Vec<u8>, ModelIoError> {
    fs::read(path).map_err(|source| ModelIoError::Read {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ModelIoError> {
    fs::write(path, bytes).map_err(|source| ModelIoError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Loads, validates, widens to f64, and folds batch norm.
pub fn load_model(manifest_path: &Path, weights_path: &Path) -> Result<NetworkModel, ModelIoError> {
    let manifest: ManifestFile = serde_json::from_slice(&read_file(manifest_path)?)?;
    if manifest.version != FORMAT_VERSION {
        return Err(ModelIoError::Version {
            got: manifest.version,
        });
    }
    if manifest.input_shape.is_empty() || manifest.input_shape.len() > 3 {
        return Err(ModelIoError::InputShape {
            got: manifest.input_shape.len(),
        });
    }
    let blob = read_file(weights_path)?;
    let params = decode_tensors(&manifest.tensors, &blob)?;

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (idx, entry) in manifest.layers.iter().enumerate() {
        layers.push(layer_from_entry(idx, entry)?);
    }
    let model = NetworkModel {
        input_shape: manifest.input_shape,
        layers,
        params,
        metadata: manifest.metadata,
    };
    model.validate()?;
    Ok(model.fold_batch_norm()?)
}

/// Validates and writes the manifest plus the f32 weights blob. Tensors are
/// laid out in layer order, unreferenced extras after them by name.
pub fn save_model(
    model: &NetworkModel,
    manifest_path: &Path,
    weights_path: &Path,
) -> Result<(), ModelIoError> {
    model.validate()?;

    let mut ordered: Vec<&str> = Vec::new();
    for layer in &model.layers {
        ordered.extend(layer.parameter_names());
    }
    for name in model.params.keys() {
        if !ordered.contains(&name.as_str()) {
            ordered.push(name);
        }
    }

    let mut blob: Vec<u8> = Vec::new();
    let mut entries = Vec::with_capacity(ordered.len());
    for name in ordered {
        let tensor = model
            .params
            .get(name)
            .expect("validate() checked every referenced parameter");
        let offset = blob.len() as u64;
        for &v in tensor.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        entries.push(TensorEntry {
            name: name.to_string(),
            dtype: "f32".to_string(),
            shape: tensor.shape().to_vec(),
            offset,
            length: blob.len() as u64 - offset,
        });
    }

    let manifest = ManifestFile {
        version: FORMAT_VERSION,
        input_shape: model.input_shape.clone(),
        layers: model.layers.iter().map(entry_from_layer).collect(),
        tensors: entries,
        metadata: model.metadata.clone(),
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    write_file(manifest_path, &json)?;
    write_file(weights_path, &blob)
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorContainerFile {
    version: u32,
    tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
}

/// Writes named tensors in the same container format as model weights.
pub fn save_tensors(
    manifest_path: &Path,
    blob_path: &Path,
    tensors: &[(&str, &Tensor)],
    metadata: BTreeMap<String, String>,
) -> Result<(), ModelIoError> {
    let mut blob: Vec<u8> = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, tensor) in tensors {
        let offset = blob.len() as u64;
        for &v in tensor.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        entries.push(TensorEntry {
            name: name.to_string(),
            dtype: "f32".to_string(),
            shape: tensor.shape().to_vec(),
            offset,
            length: blob.len() as u64 - offset,
        });
    }
    let container = TensorContainerFile {
        version: FORMAT_VERSION,
        tensors: entries,
        metadata,
    };
    write_file(manifest_path, &serde_json::to_vec_pretty(&container)?)?;
    write_file(blob_path, &blob)
}

/// Named tensors in container order plus the container metadata.
pub type TensorContainer = (Vec<(String, Tensor)>, BTreeMap<String, String>);

/// Reads a tensor container written by [`save_tensors`]. The blob path
/// defaults to the manifest path with a `.bin` extension.
pub fn load_tensors(
    manifest_path: &Path,
    blob_path: Option<&Path>,
) -> Result<TensorContainer, ModelIoError> {
    let container: TensorContainerFile = serde_json::from_slice(&read_file(manifest_path)?)?;
    if container.version != FORMAT_VERSION {
        return Err(ModelIoError::Version {
            got: container.version,
        });
    }
    let default_blob = manifest_path.with_extension("bin");
    let blob = read_file(blob_path.unwrap_or(&default_blob))?;
    let tensors = decode_tensors(&container.tensors, &blob)?;
    let mut ordered = Vec::with_capacity(container.tensors.len());
    for entry in &container.tensors {
        ordered.push((entry.name.clone(), tensors[&entry.name].clone()));
    }
    Ok((ordered, container.metadata))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    /// Builds the minimal container by hand, byte by byte, straight from the
    /// format description: dense(2->1) + sigmoid over three f32 values.
    fn minimal_manifest_json() -> String {
        r#"{
            "version": 1,
            "input_shape": [2],
            "layers": [
                {"kind": "dense", "in_features": 2, "out_features": 1,
                 "params": {"weight": "w", "bias": "b"}},
                {"kind": "sigmoid"}
            ],
            "tensors": [
                {"name": "w", "dtype": "f32", "shape": [1, 2], "offset": 0, "length": 8},
                {"name": "b", "dtype": "f32", "shape": [1], "offset": 8, "length": 4}
            ]
        }"#
        .to_string()
    }

    fn minimal_blob() -> Vec<u8> {
        let mut blob = Vec::new();
        for v in [2.0f32, -1.0, 0.5] {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        blob
    }

    #[test]
    fn loads_hand_written_minimal_container() {
        let dir = tempdir().unwrap();
        let mpath = dir.path().join("model.json");
        let wpath = dir.path().join("model.bin");
        fs::write(&mpath, minimal_manifest_json()).unwrap();
        fs::write(&wpath, minimal_blob()).unwrap();

        let model = load_model(&mpath, &wpath).unwrap();
        assert_eq!(model.layers.len(), 2);
        assert_eq!(model.params["w"].shape(), &[1, 2]);
        assert_eq!(model.params["w"].data(), &[2.0, -1.0]);
        assert_eq!(model.params["b"].data(), &[0.5]);

        // round-trip back through save
        let m2 = dir.path().join("copy.json");
        let w2 = dir.path().join("copy.bin");
        save_model(&model, &m2, &w2).unwrap();
        let reloaded = load_model(&m2, &w2).unwrap();
        assert_eq!(reloaded.layers, model.layers);
        assert_eq!(reloaded.params, model.params);
    }

    #[test]
    fn offset_beyond_eof_is_a_bounds_error() {
        let dir = tempdir().unwrap();
        let mpath = dir.path().join("model.json");
        let wpath = dir.path().join("model.bin");
        fs::write(&mpath, minimal_manifest_json()).unwrap();
        fs::write(&wpath, &minimal_blob()[..8]).unwrap();
        assert!(matches!(
            load_model(&mpath, &wpath),
            Err(ModelIoError::Bounds { .. })
        ));
    }

    #[test]
    fn wrong_dtype_is_rejected() {
        let dir = tempdir().unwrap();
        let mpath = dir.path().join("model.json");
        let wpath = dir.path().join("model.bin");
        fs::write(
            &mpath,
            minimal_manifest_json().replace("\"f32\", \"shape\": [1, 2]", "\"f64\", \"shape\": [1, 2]"),
        )
        .unwrap();
        fs::write(&wpath, minimal_blob()).unwrap();
        assert!(matches!(
            load_model(&mpath, &wpath),
            Err(ModelIoError::Dtype { .. })
        ));
    }

    #[test]
    fn conv_weight_of_rank_three_is_a_shape_error() {
        let dir = tempdir().unwrap();
        let mpath = dir.path().join("model.json");
        let wpath = dir.path().join("model.bin");
        let manifest = r#"{
            "version": 1,
            "input_shape": [1, 3, 3],
            "layers": [
                {"kind": "conv2d", "in_channels": 1, "out_channels": 3,
                 "kernel_h": 1, "kernel_w": 3, "stride_h": 1, "stride_w": 1,
                 "pad_h": 0, "pad_w": 0, "params": {"weight": "w", "bias": "b"}},
                {"kind": "flatten"},
                {"kind": "dense", "in_features": 9, "out_features": 1,
                 "params": {"weight": "hw", "bias": "hb"}},
                {"kind": "sigmoid"}
            ],
            "tensors": [
                {"name": "w", "dtype": "f32", "shape": [3, 1, 3], "offset": 0, "length": 36},
                {"name": "b", "dtype": "f32", "shape": [3], "offset": 36, "length": 12},
                {"name": "hw", "dtype": "f32", "shape": [1, 9], "offset": 48, "length": 36},
                {"name": "hb", "dtype": "f32", "shape": [1], "offset": 84, "length": 4}
            ]
        }"#;
        fs::write(&mpath, manifest).unwrap();
        fs::write(&wpath, vec![0u8; 88]).unwrap();
        match load_model(&mpath, &wpath) {
            Err(ModelIoError::Model(ModelError::ParamShape { name, .. })) => {
                assert_eq!(name, "w")
            }
            other => panic!("expected ParamShape, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        let dir = tempdir().unwrap();
        let mpath = dir.path().join("model.json");
        let wpath = dir.path().join("model.bin");
        fs::write(&mpath, "{not json").unwrap();
        fs::write(&wpath, minimal_blob()).unwrap();
        assert!(matches!(
            load_model(&mpath, &wpath),
            Err(ModelIoError::Parse(_))
        ));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempdir().unwrap();
        let mpath = dir.path().join("model.json");
        let wpath = dir.path().join("model.bin");
        fs::write(&mpath, minimal_manifest_json().replace("\"version\": 1", "\"version\": 2"))
            .unwrap();
        fs::write(&wpath, minimal_blob()).unwrap();
        assert!(matches!(
            load_model(&mpath, &wpath),
            Err(ModelIoError::Version { got: 2 })
        ));
    }

    #[test]
    fn save_refuses_invalid_models() {
        let dir = tempdir().unwrap();
        let empty = NetworkModel::new(vec![2], vec![]);
        let mpath = dir.path().join("m.json");
        let wpath = dir.path().join("m.bin");
        assert!(matches!(
            save_model(&empty, &mpath, &wpath),
            Err(ModelIoError::Model(ModelError::NotDiscriminator { .. }))
        ));
        assert!(!mpath.exists(), "refused model must not leave partial files");
        assert!(!wpath.exists());
    }

    #[test]
    fn tensor_container_round_trips() {
        let dir = tempdir().unwrap();
        let mpath = dir.path().join("rel.json");
        let bpath = dir.path().join("rel.bin");
        let t = Tensor::new(vec![1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let mut meta = BTreeMap::new();
        meta.insert("polarity".to_string(), "positive".to_string());
        save_tensors(&mpath, &bpath, &[("relevance", &t)], meta).unwrap();

        let (tensors, meta) = load_tensors(&mpath, Some(&bpath)).unwrap();
        assert_eq!(tensors.len(), 1);
        assert_eq!(tensors[0].0, "relevance");
        assert_eq!(tensors[0].1.shape(), &[1, 2, 2]);
        for (a, b) in tensors[0].1.data().iter().zip(t.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(meta["polarity"], "positive");
    }
}
