//! On-disk model checkpoints.
//!
//! A checkpoint is a directory:
//!
//! ```text
//! manifest.txt        key=value lines (see below)
//! 00_block0.weight.f32
//! 01_block0.bias.f32
//! ...                 one raw little-endian f32 blob per tensor, row-major
//! report.jsonl        per-epoch records (optional)
//! summary.json        run summary (optional)
//! ```
//!
//! Manifest keys, in order: `format=curvglyph-checkpoint`, `version=1`,
//! `dtype=f32le`, `input_dim`, `hidden_units` and `dropout` (comma separated),
//! `num_classes`, `seed`, `bn_momentum`, `bn_eps`, then one
//! `tensor=<name> <rows>x<cols> <file>` line per blob. Tensor order per hidden
//! block is `weight, bias, gamma, beta, running_mean, running_var`, followed
//! by `output.weight, output.bias`. Vectors are written as `<len>x1`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::nn::layers::{BatchNorm, Dense};
use crate::nn::{Architecture, HiddenBlock, HiddenSpec, Mlp};
use crate::train::TrainReport;

pub const FORMAT_NAME: &str = "curvglyph-checkpoint";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const REPORT_FILE: &str = "report.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {}: {source}", path.display())]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
    #[error("checkpoint has {found} classes but {expected} were requested")]
    ClassMismatch { expected: usize, found: usize },
    #[error("tensor {tensor}: manifest implies {expected} bytes, blob has {actual}")]
    CorruptBlob {
        tensor: String,
        expected: usize,
        actual: usize,
    },
    #[error("malformed manifest: {0}")]
    Malformed(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

struct TensorRef<'a> {
    name: String,
    rows: usize,
    cols: usize,
    data: &'a [f32],
}

fn tensors(model: &Mlp<f32>) -> Vec<TensorRef<'_>> {
    fn mat<'a>(name: String, a: &'a Array2<f32>) -> TensorRef<'a> {
        TensorRef {
            name,
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.as_slice().expect("standard layout"),
        }
    }
    fn vec<'a>(name: String, a: &'a Array1<f32>) -> TensorRef<'a> {
        TensorRef {
            name,
            rows: a.len(),
            cols: 1,
            data: a.as_slice().expect("standard layout"),
        }
    }
    let mut out = Vec::new();
    for (i, b) in model.blocks.iter().enumerate() {
        out.push(mat(format!("block{i}.weight"), &b.dense.weight));
        out.push(vec(format!("block{i}.bias"), &b.dense.bias));
        out.push(vec(format!("block{i}.gamma"), &b.norm.gamma));
        out.push(vec(format!("block{i}.beta"), &b.norm.beta));
        out.push(vec(format!("block{i}.running_mean"), &b.norm.running_mean));
        out.push(vec(format!("block{i}.running_var"), &b.norm.running_var));
    }
    out.push(mat("output.weight".into(), &model.output.weight));
    out.push(vec("output.bias".into(), &model.output.bias));
    out
}

fn join<T: ToString>(items: impl Iterator<Item = T>) -> String {
    items.map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Writes `model` (and optionally the run report) into directory `dir`.
pub fn save_checkpoint(
    model: &Mlp<f32>,
    report: Option<&TrainReport>,
    dir: &Path,
) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let arch = model.architecture();
    let (momentum, eps) = model
        .blocks
        .first()
        .map_or((0.99, 1e-3), |b| (b.norm.momentum, b.norm.eps));
    let mut manifest = format!(
        "format={FORMAT_NAME}\nversion={FORMAT_VERSION}\ndtype=f32le\ninput_dim={}\n\
         hidden_units={}\ndropout={}\nnum_classes={}\nseed={}\nbn_momentum={momentum}\nbn_eps={eps}\n",
        arch.input_dim,
        join(arch.hidden.iter().map(|h| h.units)),
        join(arch.hidden.iter().map(|h| h.dropout)),
        arch.num_classes,
        model.seed(),
    );
    for (i, t) in tensors(model).iter().enumerate() {
        let file = format!("{i:02}_{}.f32", t.name);
        manifest.push_str(&format!("tensor={} {}x{} {file}\n", t.name, t.rows, t.cols));
        let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(io_err(&path))?;

    if let Some(report) = report {
        let path = dir.join(REPORT_FILE);
        fs::write(&path, report.records_jsonl()).map_err(io_err(&path))?;
        let path = dir.join(SUMMARY_FILE);
        fs::write(&path, report.summary_json()).map_err(io_err(&path))?;
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CheckpointError> {
    value
        .trim()
        .parse()
        .map_err(|_| CheckpointError::Malformed(format!("bad value for {key}: {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CheckpointError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v)).collect()
}

struct Manifest {
    arch: Architecture,
    seed: u64,
    bn_momentum: f64,
    bn_eps: f64,
    tensors: Vec<(String, usize, usize, String)>,
}

fn read_manifest(dir: &Path) -> Result<Manifest, CheckpointError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut fields = std::collections::HashMap::new();
    let mut tensors = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CheckpointError::Malformed(format!("line without '=': {line:?}")))?;
        if key == "tensor" {
            let parts: Vec<&str> = value.split_whitespace().collect();
            let [name, dims, file] = parts[..] else {
                return Err(CheckpointError::Malformed(format!("bad tensor line {line:?}")));
            };
            let (rows, cols) = dims
                .split_once('x')
                .ok_or_else(|| CheckpointError::Malformed(format!("bad dims {dims:?}")))?;
            tensors.push((
                name.to_string(),
                parse("rows", rows)?,
                parse("cols", cols)?,
                file.to_string(),
            ));
        } else {
            fields.insert(key.to_string(), value.to_string());
        }
    }
    let get = |key: &str| {
        fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CheckpointError::Malformed(format!("missing key {key}")))
    };
    if get("format")? != FORMAT_NAME {
        return Err(CheckpointError::VersionMismatch(format!(
            "unknown format {:?}",
            get("format")?
        )));
    }
    let version: u32 = parse("version", get("version")?)?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch(format!(
            "file is version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }
    if get("dtype")? != "f32le" {
        return Err(CheckpointError::VersionMismatch(format!(
            "unsupported dtype {:?}",
            get("dtype")?
        )));
    }
    let units: Vec<usize> = parse_list("hidden_units", get("hidden_units")?)?;
    let dropout: Vec<f64> = parse_list("dropout", get("dropout")?)?;
    if units.len() != dropout.len() {
        return Err(CheckpointError::Malformed(
            "hidden_units and dropout lengths differ".into(),
        ));
    }
    Ok(Manifest {
        arch: Architecture {
            input_dim: parse("input_dim", get("input_dim")?)?,
            hidden: units
                .into_iter()
                .zip(dropout)
                .map(|(units, dropout)| HiddenSpec { units, dropout })
                .collect(),
            num_classes: parse("num_classes", get("num_classes")?)?,
        },
        seed: parse("seed", get("seed")?)?,
        bn_momentum: parse("bn_momentum", get("bn_momentum")?)?,
        bn_eps: parse("bn_eps", get("bn_eps")?)?,
        tensors,
    })
}

/// Loads a checkpoint directory written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<Mlp<f32>, CheckpointError> {
    let manifest = read_manifest(dir)?;
    let arch = manifest.arch.clone();

    // Expected tensor layout, derived from the architecture alone.
    let mut expected: Vec<(String, usize, usize)> = Vec::new();
    let mut width = arch.input_dim;
    for (i, h) in arch.hidden.iter().enumerate() {
        expected.push((format!("block{i}.weight"), h.units, width));
        for part in ["bias", "gamma", "beta", "running_mean", "running_var"] {
            expected.push((format!("block{i}.{part}"), h.units, 1));
        }
        width = h.units;
    }
    expected.push(("output.weight".into(), arch.num_classes, width));
    expected.push(("output.bias".into(), arch.num_classes, 1));

    if manifest.tensors.len() != expected.len() {
        return Err(CheckpointError::Malformed(format!(
            "expected {} tensors, manifest lists {}",
            expected.len(),
            manifest.tensors.len()
        )));
    }
    let mut blobs = Vec::with_capacity(expected.len());
    for ((name, rows, cols, file), (ename, erows, ecols)) in manifest.tensors.iter().zip(&expected)
    {
        if name != ename || rows != erows || cols != ecols {
            return Err(CheckpointError::Malformed(format!(
                "tensor {name} {rows}x{cols} does not match architecture ({ename} {erows}x{ecols})"
            )));
        }
        let path = dir.join(file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let want = rows * cols * 4;
        if bytes.len() != want {
            return Err(CheckpointError::CorruptBlob {
                tensor: name.clone(),
                expected: want,
                actual: bytes.len(),
            });
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        blobs.push((*rows, *cols, values));
    }

    let mut blobs = blobs.into_iter();
    let mut next_mat = || {
        let (r, c, v) = blobs.next().expect("count checked");
        Array2::from_shape_vec((r, c), v).expect("size checked")
    };
    let mut blocks = Vec::with_capacity(arch.hidden.len());
    for h in &arch.hidden {
        let weight = next_mat();
        let mut vec = || next_mat().into_shape_with_order(h.units).expect("column vector");
        let bias = vec();
        let gamma = vec();
        let beta = vec();
        let running_mean = vec();
        let running_var = vec();
        blocks.push(HiddenBlock {
            dense: Dense { weight, bias },
            norm: BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                momentum: manifest.bn_momentum,
                eps: manifest.bn_eps,
            },
            dropout: h.dropout,
        });
    }
    let weight = next_mat();
    let bias = next_mat()
        .into_shape_with_order(arch.num_classes)
        .expect("column vector");
    Ok(Mlp::from_parts(
        arch,
        blocks,
        Dense { weight, bias },
        manifest.seed,
    ))
}

/// Loads a checkpoint and checks it predicts `num_classes` classes.
pub fn load_checkpoint_for(dir: &Path, num_classes: usize) -> Result<Mlp<f32>, CheckpointError> {
    let model = load_checkpoint(dir)?;
    if model.num_classes() != num_classes {
        return Err(CheckpointError::ClassMismatch {
            expected: num_classes,
            found: model.num_classes(),
        });
    }
    Ok(model)
}
