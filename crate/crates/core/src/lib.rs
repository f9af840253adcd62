//! Handwritten-glyph recognition from curvature and orientation maps.
//!
//! * [`idx`] reads MNIST / EMNIST Letters IDX files, [`split`] partitions them.
//! * [`features`] turns a 28×28 glyph into the 2352-value descriptor.
//! * [`nn`] is the dense classifier with its optimizer, [`train`] the epoch
//!   loop, [`checkpoint`] and [`cache`] the on-disk formats.

pub mod cache;
pub mod checkpoint;
pub mod features;
pub mod fixtures;
pub mod idx;
pub mod nn;
pub mod pgm;
pub mod pipeline;
pub mod rng;
pub mod split;
pub mod train;

pub use features::{assemble_features, FeatureMaps, FEATURE_DIM};
pub use idx::{DatasetKind, GlyphImage, LabeledDataset};
pub use nn::Mlp;
pub use split::SplitPlan;
pub use train::{TrainConfig, TrainReport};
