//! Glue for the extract → train → evaluate stages.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cache::{CacheError, FeatureSet};
use crate::idx::{self, DatasetKind, IdxError, LabeledDataset};
use crate::split::{self, SplitError, SplitPlan};

pub const TEST_FRACTION: f64 = 0.2;
pub const VAL_FRACTION_OF_TRAIN: f64 = 0.1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("split file {}: {message}", path.display())]
    SplitFile { path: PathBuf, message: String },
}

/// Conventional location of a dataset's IDX files under a data root.
pub fn dataset_dir(root: &Path, kind: DatasetKind) -> PathBuf {
    root.join(match kind {
        DatasetKind::Mnist => "mnist",
        DatasetKind::EmnistLetters => "emnist",
    })
}

/// `dataset_dir(root, kind)` when it exists, otherwise `root` itself, so a
/// data directory may hold the IDX files directly.
pub fn resolve_dataset_dir(root: &Path, kind: DatasetKind) -> PathBuf {
    let sub = dataset_dir(root, kind);
    if sub.is_dir() {
        sub
    } else {
        root.to_path_buf()
    }
}

/// Sidecar path holding the split plan of a feature cache.
pub fn split_path(features: &Path) -> PathBuf {
    let mut name = features.as_os_str().to_owned();
    name.push(".split.json");
    PathBuf::from(name)
}

pub fn save_split(plan: &SplitPlan, path: &Path) -> Result<(), PipelineError> {
    let text = serde_json::to_string(plan).expect("split serializes");
    fs::write(path, text).map_err(|e| PipelineError::SplitFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_split(path: &Path, expected_len: usize) -> Result<SplitPlan, PipelineError> {
    let err = |message: String| PipelineError::SplitFile {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let plan: SplitPlan = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    if plan.total() != expected_len {
        return Err(err(format!(
            "covers {} samples, feature file has {expected_len}",
            plan.total()
        )));
    }
    Ok(plan)
}

/// Loads a dataset from a data root, splits it with the default fractions and
/// extracts features.
pub fn extract(
    kind: DatasetKind,
    data_dir: &Path,
    seed: u64,
) -> Result<(FeatureSet, SplitPlan), PipelineError> {
    extract_subset(kind, data_dir, seed, None)
}

/// As [`extract`], optionally keeping only a stratified subset of `subset`
/// samples (drawn with `seed`) before splitting.
pub fn extract_subset(
    kind: DatasetKind,
    data_dir: &Path,
    seed: u64,
    subset: Option<usize>,
) -> Result<(FeatureSet, SplitPlan), PipelineError> {
    let mut dataset = idx::load_dataset(kind, &resolve_dataset_dir(data_dir, kind))?;
    if let Some(size) = subset.filter(|&n| n < dataset.len()) {
        let keep = split::stratified_subset(dataset.labels(), dataset.num_classes(), size, seed)?;
        let images = keep.iter().map(|&i| dataset.images()[i].clone()).collect();
        let labels = keep.iter().map(|&i| dataset.labels()[i]).collect();
        let name = format!("{}-subset{size}", dataset.name());
        dataset = LabeledDataset::new(images, labels, dataset.num_classes(), &name)?;
    }
    let plan = split::stratified_split(
        dataset.labels(),
        dataset.num_classes(),
        TEST_FRACTION,
        VAL_FRACTION_OF_TRAIN,
        seed,
    )?;
    Ok((FeatureSet::extract(&dataset), plan))
}
