//! Feature-matrix cache files.
//!
//! ```text
//! 8 bytes   magic "CGFEAT01"
//! u32 LE    header length H
//! H bytes   UTF-8 JSON header {dataset, extractor_version, rows, cols, num_classes}
//! rows×cols little-endian f32, row-major
//! rows      label bytes
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{assemble_features, EXTRACTOR_VERSION, FEATURE_DIM};
use crate::idx::LabeledDataset;

const MAGIC: &[u8; 8] = b"CGFEAT01";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: not a feature cache file", .0.display())]
    BadMagic(PathBuf),
    #[error("bad cache header: {0}")]
    BadHeader(String),
    #[error("cache was built by extractor {found:?}, this build uses {expected:?}")]
    StaleExtractor { found: String, expected: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub dataset: String,
    pub extractor_version: String,
    pub rows: usize,
    pub cols: usize,
    pub num_classes: usize,
}

/// Extracted feature vectors with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub dataset: String,
    pub features: Array2<f32>,
    pub labels: Vec<u8>,
    pub num_classes: usize,
}

impl FeatureSet {
    /// Extracts the descriptor of every image, in parallel. Output row `i`
    /// belongs to image `i` regardless of scheduling.
    pub fn extract(dataset: &LabeledDataset) -> Self {
        let mut features = Array2::<f32>::zeros((dataset.len(), FEATURE_DIM));
        features
            .as_slice_mut()
            .expect("standard layout")
            .par_chunks_mut(FEATURE_DIM)
            .zip(dataset.images().par_iter())
            .for_each(|(row, img)| row.copy_from_slice(assemble_features(img).flat()));
        Self {
            dataset: dataset.name().to_string(),
            features,
            labels: dataset.labels().to_vec(),
            num_classes: dataset.num_classes(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn header(&self) -> CacheHeader {
        CacheHeader {
            dataset: self.dataset.clone(),
            extractor_version: EXTRACTOR_VERSION.to_string(),
            rows: self.features.nrows(),
            cols: self.features.ncols(),
            num_classes: self.num_classes,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CacheError> {
        let io = |source| CacheError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&(header.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&header).map_err(io)?;
        let mut buf = Vec::with_capacity(FEATURE_DIM * 4);
        for row in self.features.rows() {
            buf.clear();
            buf.extend(row.iter().flat_map(|v| v.to_le_bytes()));
            w.write_all(&buf).map_err(io)?;
        }
        w.write_all(&self.labels).map_err(io)?;
        w.flush().map_err(io)
    }

    /// Reads a cache file, refusing ones written by a different extractor.
    pub fn load(path: &Path) -> Result<Self, CacheError> {
        let io = |source| CacheError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut r = BufReader::new(File::open(path).map_err(io)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(CacheError::BadMagic(path.to_path_buf()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(io)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header).map_err(io)?;
        let header: CacheHeader = serde_json::from_slice(&header)
            .map_err(|e| CacheError::BadHeader(e.to_string()))?;
        if header.extractor_version != EXTRACTOR_VERSION {
            return Err(CacheError::StaleExtractor {
                found: header.extractor_version,
                expected: EXTRACTOR_VERSION.to_string(),
            });
        }
        if header.cols != FEATURE_DIM {
            return Err(CacheError::BadHeader(format!(
                "expected {FEATURE_DIM} columns, header says {}",
                header.cols
            )));
        }
        let mut features = Array2::<f32>::zeros((header.rows, header.cols));
        let mut buf = vec![0u8; header.cols * 4];
        for mut row in features.rows_mut() {
            r.read_exact(&mut buf).map_err(io)?;
            for (v, b) in row.iter_mut().zip(buf.chunks_exact(4)) {
                *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
        }
        let mut labels = vec![0u8; header.rows];
        r.read_exact(&mut labels).map_err(io)?;
        if let Some(&l) = labels.iter().find(|&&l| usize::from(l) >= header.num_classes) {
            return Err(CacheError::BadHeader(format!(
                "label {l} exceeds num_classes {}",
                header.num_classes
            )));
        }
        Ok(Self {
            dataset: header.dataset,
            features,
            labels,
            num_classes: header.num_classes,
        })
    }
}
