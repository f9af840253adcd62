//! From-scratch dense classifier.
//!
//! Every hidden block runs `FC → BatchNorm → ReLU → Dropout`; the output layer
//! is a bare FC whose logits feed the fused softmax cross-entropy. The network
//! is generic over the float type so the same code trains at `f32` and is
//! gradient-checked at `f64`.
//!
//! Canonical trainable-parameter order (shared by the optimizer and the
//! checkpoint format): for each hidden block `weight, bias, gamma, beta`, then
//! the output `weight, bias`.

pub mod adam;
pub mod gradcheck;
pub mod layers;

use std::fmt::Debug;

use ndarray::{Array2, ArrayView2, LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssign};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FEATURE_DIM;
use crate::rng::{self, SeededRng};
use layers::{BatchNorm, BatchNormCache, Dense};

pub use adam::{Adam, AdamConfig};

pub trait Scalar:
    LinalgScalar + Float + NumAssign + ScalarOperand + Debug + Send + Sync + 'static
{
    fn of(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn to_f64_lossy(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("train-mode forward needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("cache does not match this model or gradient: {0}")]
    CacheMismatch(&'static str),
    #[error("unsupported class count {0} (expected 10 or 26)")]
    UnsupportedClasses(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenSpec {
    pub units: usize,
    pub dropout: f64,
}

/// Layer widths and dropout rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<HiddenSpec>,
    pub num_classes: usize,
}

impl Architecture {
    /// 2352 → 2048 → 1024 → 512 → 256 → classes, dropout 0.5/0.5/0.4/0.3.
    pub fn curvature_mlp(num_classes: usize) -> Self {
        let hidden = [(2048, 0.5), (1024, 0.5), (512, 0.4), (256, 0.3)]
            .into_iter()
            .map(|(units, dropout)| HiddenSpec { units, dropout })
            .collect();
        Self {
            input_dim: FEATURE_DIM,
            hidden,
            num_classes,
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(self.hidden.iter().map(|h| h.units));
        w.push(self.num_classes);
        w
    }

    /// Weights, biases, gamma and beta.
    pub fn trainable_parameters(&self) -> usize {
        let w = self.widths();
        let dense: usize = w.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
        let bn: usize = self.hidden.iter().map(|h| 2 * h.units).sum();
        dense + bn
    }

    /// Trainable parameters plus the BatchNorm running statistics.
    pub fn total_parameters(&self) -> usize {
        self.trainable_parameters() + self.hidden.iter().map(|h| 2 * h.units).sum::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenBlock<T> {
    pub dense: Dense<T>,
    pub norm: BatchNorm<T>,
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    arch: Architecture,
    pub blocks: Vec<HiddenBlock<T>>,
    pub output: Dense<T>,
    seed: u64,
}

/// Activations saved by a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    blocks: Vec<BlockCache<T>>,
    last_input: Array2<T>,
}

#[derive(Clone, Debug)]
struct BlockCache<T> {
    input: Array2<T>,
    norm: BatchNormCache<T>,
    /// Post-normalization, pre-ReLU activations.
    pre_relu: Array2<T>,
    mask: Option<Array2<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockGrads<T> {
    pub weight: Array2<T>,
    pub bias: ndarray::Array1<T>,
    pub gamma: ndarray::Array1<T>,
    pub beta: ndarray::Array1<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub blocks: Vec<BlockGrads<T>>,
    pub output_weight: Array2<T>,
    pub output_bias: ndarray::Array1<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Flat views in canonical parameter order.
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(4 * self.blocks.len() + 2);
        for b in &self.blocks {
            out.push(b.weight.as_slice().expect("standard layout"));
            out.push(b.bias.as_slice().expect("standard layout"));
            out.push(b.gamma.as_slice().expect("standard layout"));
            out.push(b.beta.as_slice().expect("standard layout"));
        }
        out.push(self.output_weight.as_slice().expect("standard layout"));
        out.push(self.output_bias.as_slice().expect("standard layout"));
        out
    }
}

/// Stream id for weight initialization.
const INIT_STREAM: u64 = 0x1417;

impl<T: Scalar> Mlp<T> {
    /// Glorot-uniform weights, zero biases, BN at identity; fully determined
    /// by `seed`.
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let mut rng = rng::substream(seed, INIT_STREAM);
        let widths = arch.widths();
        let blocks = arch
            .hidden
            .iter()
            .enumerate()
            .map(|(i, h)| HiddenBlock {
                dense: Dense::glorot(widths[i], h.units, &mut rng),
                norm: BatchNorm::new(h.units),
                dropout: h.dropout,
            })
            .collect();
        let n = widths.len();
        let output = Dense::glorot(widths[n - 2], widths[n - 1], &mut rng);
        Self {
            arch,
            blocks,
            output,
            seed,
        }
    }

    /// The standard 4-block model for 10 (digits) or 26 (letters) classes.
    pub fn curvature_mlp(num_classes: usize, seed: u64) -> Result<Self, NnError> {
        if num_classes != 10 && num_classes != 26 {
            return Err(NnError::UnsupportedClasses(num_classes));
        }
        Ok(Self::new(Architecture::curvature_mlp(num_classes), seed))
    }

    /// Reassembles a model from already-shaped parts (checkpoint loading).
    pub fn from_parts(
        arch: Architecture,
        blocks: Vec<HiddenBlock<T>>,
        output: Dense<T>,
        seed: u64,
    ) -> Self {
        Self {
            arch,
            blocks,
            output,
            seed,
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<(), NnError> {
        if x.ncols() != self.arch.input_dim {
            return Err(NnError::ShapeMismatch {
                what: "input width",
                expected: self.arch.input_dim,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Inference forward: running BN statistics, dropout off. Pure.
    pub fn infer(&self, x: ArrayView2<T>) -> Result<Array2<T>, NnError> {
        self.check_input(&x)?;
        let mut act: Option<Array2<T>> = None;
        for block in &self.blocks {
            let input = act.as_ref().map_or(x, |a| a.view());
            let z = block.dense.forward(input);
            let mut y = block.norm.forward_infer(&z);
            layers::relu_in_place(&mut y);
            act = Some(y);
        }
        let input = act.as_ref().map_or(x, |a| a.view());
        Ok(self.output.forward(input))
    }

    /// Training forward: batch statistics (running averages updated) and
    /// dropout masks drawn from `rng`.
    pub fn forward_train(
        &mut self,
        x: ArrayView2<T>,
        rng: &mut SeededRng,
    ) -> Result<(Array2<T>, ForwardCache<T>), NnError> {
        self.check_input(&x)?;
        if x.nrows() < 2 {
            return Err(NnError::BatchTooSmall(x.nrows()));
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut act = x.to_owned();
        for block in &mut self.blocks {
            let z = block.dense.forward(act.view());
            let (pre_relu, norm) = block.norm.forward_train(&z);
            let mut a = pre_relu.clone();
            layers::relu_in_place(&mut a);
            let mask = (block.dropout > 0.0).then(|| {
                let m = layers::dropout_mask::<T>(a.dim(), block.dropout, rng);
                a *= &m;
                m
            });
            caches.push(BlockCache {
                input: std::mem::replace(&mut act, a),
                norm,
                pre_relu,
                mask,
            });
        }
        let logits = self.output.forward(act.view());
        Ok((
            logits,
            ForwardCache {
                blocks: caches,
                last_input: act,
            },
        ))
    }

    /// Backpropagates `dlogits` through the cached train-mode pass.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        dlogits: ArrayView2<T>,
    ) -> Result<Gradients<T>, NnError> {
        if cache.blocks.len() != self.blocks.len() {
            return Err(NnError::CacheMismatch("block count"));
        }
        if dlogits.nrows() != cache.last_input.nrows()
            || dlogits.ncols() != self.output.outputs()
            || cache.last_input.ncols() != self.output.inputs()
        {
            return Err(NnError::CacheMismatch("batch or output shape"));
        }
        let (output_weight, output_bias) =
            self.output.backward_params(cache.last_input.view(), dlogits);
        let mut upstream = self.output.backward_input(dlogits);

        let mut grads: Vec<BlockGrads<T>> = Vec::with_capacity(self.blocks.len());
        for (i, (block, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            if bc.input.ncols() != block.dense.inputs() || bc.pre_relu.dim() != upstream.dim() {
                return Err(NnError::CacheMismatch("block activation shape"));
            }
            if let Some(mask) = &bc.mask {
                upstream *= mask;
            }
            ndarray::Zip::from(&mut upstream)
                .and(&bc.pre_relu)
                .for_each(|d, &y| {
                    if y <= T::zero() {
                        *d = T::zero();
                    }
                });
            let (dz, gamma, beta) = block.norm.backward(&bc.norm, &upstream);
            let (weight, bias) = block.dense.backward_params(bc.input.view(), dz.view());
            if i > 0 {
                upstream = block.dense.backward_input(dz.view());
            }
            grads.push(BlockGrads {
                weight,
                bias,
                gamma,
                beta,
            });
        }
        grads.reverse();
        Ok(Gradients {
            blocks: grads,
            output_weight,
            output_bias,
        })
    }

    /// Mutable flat views in canonical parameter order.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(4 * self.blocks.len() + 2);
        for b in &mut self.blocks {
            out.push(b.dense.weight.as_slice_mut().expect("standard layout"));
            out.push(b.dense.bias.as_slice_mut().expect("standard layout"));
            out.push(b.norm.gamma.as_slice_mut().expect("standard layout"));
            out.push(b.norm.beta.as_slice_mut().expect("standard layout"));
        }
        out.push(self.output.weight.as_slice_mut().expect("standard layout"));
        out.push(self.output.bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn params(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(4 * self.blocks.len() + 2);
        for b in &self.blocks {
            out.push(b.dense.weight.as_slice().expect("standard layout"));
            out.push(b.dense.bias.as_slice().expect("standard layout"));
            out.push(b.norm.gamma.as_slice().expect("standard layout"));
            out.push(b.norm.beta.as_slice().expect("standard layout"));
        }
        out.push(self.output.weight.as_slice().expect("standard layout"));
        out.push(self.output.bias.as_slice().expect("standard layout"));
        out
    }
}
