//! IDX container parsing for MNIST and EMNIST Letters.
//!
//! ```text
//! bytes  0-1   0x00 0x00       reserved
//! byte   2     0x08            element type (unsigned byte)
//! byte   3     rank            3 for images, 1 for labels
//! bytes  4..   rank × u32 BE   dimension sizes
//! then         product(dims)   raw bytes, row-major
//! ```
//!
//! Streams that start with the gzip magic `1F 8B` are inflated first, so both
//! the plain and the `.gz` distributions are accepted.

use std::borrow::Cow;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use thiserror::Error;

/// Glyph side length in pixels.
pub const GLYPH_SIDE: usize = 28;
/// Pixels per glyph.
pub const GLYPH_PIXELS: usize = GLYPH_SIDE * GLYPH_SIDE;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("IDX images are {rows}x{cols}, expected 28x28")]
    DimMismatch { rows: usize, cols: usize },
    #[error("IDX stream truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("gzip stream could not be inflated: {0}")]
    Gzip(std::io::Error),
    #[error("label {label} outside the expected range {min}..={max}")]
    LabelOutOfRange { label: u8, min: u8, max: u8 },
    #[error("{images} images but {labels} labels")]
    LengthMismatch { images: usize, labels: usize },
    #[error("pixel value {value} at {index} is outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f32 },
    #[error("expected {expected} pixels per glyph, got {got}")]
    WrongPixelCount { expected: usize, got: usize },
    #[error("missing dataset file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("could not read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One 28×28 grayscale glyph, row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GlyphImage {
    pixels: Vec<f32>,
    source_index: usize,
}

impl GlyphImage {
    pub fn new(pixels: Vec<f32>, source_index: usize) -> Result<Self, IdxError> {
        if pixels.len() != GLYPH_PIXELS {
            return Err(IdxError::WrongPixelCount {
                expected: GLYPH_PIXELS,
                got: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(IdxError::PixelOutOfRange { index, value });
        }
        Ok(Self {
            pixels,
            source_index,
        })
    }

    /// Builds a glyph from a per-pixel function of `(row, col)`; values are
    /// clamped into `[0, 1]`.
    pub fn from_fn(source_index: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(GLYPH_PIXELS);
        for r in 0..GLYPH_SIDE {
            for c in 0..GLYPH_SIDE {
                let v = f(r, c);
                pixels.push(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
            }
        }
        Self {
            pixels,
            source_index,
        }
    }

    pub fn constant(value: f32) -> Self {
        Self::from_fn(0, |_, _| value)
    }

    fn from_bytes(raw: &[u8], source_index: usize) -> Self {
        Self {
            pixels: raw.iter().map(|&b| f32::from(b) / 255.0).collect(),
            source_index,
        }
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn source_index(&self) -> usize {
        self.source_index
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * GLYPH_SIDE + col]
    }

    pub fn transposed(&self) -> Self {
        Self::from_fn(self.source_index, |r, c| self.get(c, r))
    }

    /// Maps each pixel back to the nearest byte value.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| (p * 255.0).round() as u8)
            .collect()
    }
}

/// Images with integer class labels in `0..num_classes`.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    images: Vec<GlyphImage>,
    labels: Vec<u8>,
    num_classes: usize,
    name: String,
}

impl LabeledDataset {
    pub fn new(
        images: Vec<GlyphImage>,
        labels: Vec<u8>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self, IdxError> {
        if images.len() != labels.len() {
            return Err(IdxError::LengthMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        let max = (num_classes.max(1) - 1) as u8;
        if let Some(&label) = labels.iter().find(|&&l| usize::from(l) >= num_classes) {
            return Err(IdxError::LabelOutOfRange { label, min: 0, max });
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn images(&self) -> &[GlyphImage] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[usize::from(l)] += 1;
        }
        counts
    }
}

fn inflate_if_gzip(bytes: &[u8]) -> Result<Cow<'_, [u8]>, IdxError> {
    if bytes.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(IdxError::Gzip)?;
        Ok(Cow::Owned(out))
    } else {
        Ok(Cow::Borrowed(bytes))
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, IdxError> {
    let end = offset + 4;
    let word = bytes.get(offset..end).ok_or(IdxError::Truncated {
        needed: end,
        available: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([word[0], word[1], word[2], word[3]]))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { expected, found });
    }
    Ok(())
}

fn payload(bytes: &[u8], header_len: usize, len: usize) -> Result<&[u8], IdxError> {
    let needed = header_len + len;
    bytes.get(header_len..needed).ok_or(IdxError::Truncated {
        needed,
        available: bytes.len(),
    })
}

/// Parses a rank-3 unsigned-byte IDX stream of 28×28 images.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<GlyphImage>, IdxError> {
    let bytes = inflate_if_gzip(bytes)?;
    check_magic(&bytes, IMAGE_MAGIC)?;
    let count = read_u32(&bytes, 4)? as usize;
    let rows = read_u32(&bytes, 8)? as usize;
    let cols = read_u32(&bytes, 12)? as usize;
    if rows != GLYPH_SIDE || cols != GLYPH_SIDE {
        return Err(IdxError::DimMismatch { rows, cols });
    }
    let data = payload(&bytes, 16, count * GLYPH_PIXELS)?;
    Ok(data
        .chunks_exact(GLYPH_PIXELS)
        .enumerate()
        .map(|(i, raw)| GlyphImage::from_bytes(raw, i))
        .collect())
}

/// Parses a rank-1 unsigned-byte IDX stream; labels are returned unshifted.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let bytes = inflate_if_gzip(bytes)?;
    check_magic(&bytes, LABEL_MAGIC)?;
    let count = read_u32(&bytes, 4)? as usize;
    Ok(payload(&bytes, 8, count)?.to_vec())
}

pub fn encode_idx_images(images: &[GlyphImage]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * GLYPH_PIXELS);
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(GLYPH_SIDE as u32).to_be_bytes());
    out.extend_from_slice(&(GLYPH_SIDE as u32).to_be_bytes());
    for img in images {
        out.extend(img.to_bytes());
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Shifts raw EMNIST Letters labels `1..=26` to `0..=25` and transposes each
/// image so glyphs are upright (EMNIST stores them column-major).
pub fn normalize_emnist(
    labels: &[u8],
    images: &[GlyphImage],
) -> Result<LabeledDataset, IdxError> {
    if labels.len() != images.len() {
        return Err(IdxError::LengthMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    let shifted = labels
        .iter()
        .map(|&l| {
            if (1..=26).contains(&l) {
                Ok(l - 1)
            } else {
                Err(IdxError::LabelOutOfRange {
                    label: l,
                    min: 1,
                    max: 26,
                })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let upright = images.iter().map(GlyphImage::transposed).collect();
    LabeledDataset::new(upright, shifted, 26, "emnist-letters")
}

/// The two supported corpora.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    EmnistLetters,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::EmnistLetters => "emnist-letters",
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            DatasetKind::Mnist => 10,
            DatasetKind::EmnistLetters => 26,
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "mnist" => Some(DatasetKind::Mnist),
            "emnist-letters" | "emnist" => Some(DatasetKind::EmnistLetters),
            _ => None,
        }
    }

    /// File stems for (train images, train labels, test images, test labels).
    fn file_stems(self) -> [&'static str; 4] {
        match self {
            DatasetKind::Mnist => [
                "train-images-idx3-ubyte",
                "train-labels-idx1-ubyte",
                "t10k-images-idx3-ubyte",
                "t10k-labels-idx1-ubyte",
            ],
            DatasetKind::EmnistLetters => [
                "emnist-letters-train-images-idx3-ubyte",
                "emnist-letters-train-labels-idx1-ubyte",
                "emnist-letters-test-images-idx3-ubyte",
                "emnist-letters-test-labels-idx1-ubyte",
            ],
        }
    }
}

/// Finds `<stem>` or `<stem>.gz` inside `dir`.
fn locate(dir: &Path, stem: &str) -> Result<PathBuf, IdxError> {
    let plain = dir.join(stem);
    if plain.is_file() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.is_file() {
        return Ok(gz);
    }
    Err(IdxError::MissingFile(plain))
}

fn read_file(path: &Path) -> Result<Vec<u8>, IdxError> {
    fs::read(path).map_err(|source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_idx_images(path: &Path) -> Result<Vec<GlyphImage>, IdxError> {
    parse_idx_images(&read_file(path)?)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>, IdxError> {
    parse_idx_labels(&read_file(path)?)
}

/// Loads the official train and test files from `dir` and concatenates them
/// (train first), with `source_index` renumbered over the combined set.
pub fn load_dataset(kind: DatasetKind, dir: &Path) -> Result<LabeledDataset, IdxError> {
    let stems = kind.file_stems();
    let paths = stems
        .iter()
        .map(|s| locate(dir, s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut images = read_idx_images(&paths[0])?;
    let mut labels = read_idx_labels(&paths[1])?;
    images.extend(read_idx_images(&paths[2])?);
    labels.extend(read_idx_labels(&paths[3])?);
    for (i, img) in images.iter_mut().enumerate() {
        img.source_index = i;
    }
    match kind {
        DatasetKind::Mnist => LabeledDataset::new(images, labels, 10, kind.name()),
        DatasetKind::EmnistLetters => normalize_emnist(&labels, &images),
    }
}
