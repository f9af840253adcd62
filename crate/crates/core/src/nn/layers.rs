//! Building blocks of the classifier: fully-connected, batch normalization,
//! inverted dropout and fused softmax cross-entropy.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::{NnError, Scalar};
use crate::rng::SeededRng;

/// `y = x·Wᵀ + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Glorot-uniform weights in `±√(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((outputs, inputs), || {
            T::of(rng.random_range(-limit..limit))
        });
        Self {
            weight,
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut z = x.dot(&self.weight.t());
        z += &self.bias;
        z
    }

    /// Returns `(dW, db)`.
    pub fn backward_params(&self, x: ArrayView2<T>, dz: ArrayView2<T>) -> (Array2<T>, Array1<T>) {
        (dz.t().dot(&x), dz.sum_axis(Axis(0)))
    }

    pub fn backward_input(&self, dz: ArrayView2<T>) -> Array2<T> {
        dz.dot(&self.weight)
    }
}

/// Per-feature batch normalization with a learned affine transform.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
    pub momentum: f64,
    pub eps: f64,
}

/// What the backward pass needs from a train-mode normalization.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub xhat: Array2<T>,
    pub inv_std: Array1<T>,
}

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-3;

impl<T: Scalar> BatchNorm<T> {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    /// Normalizes with batch statistics (biased variance) and folds them
    /// into the running averages.
    pub fn forward_train(&mut self, z: &Array2<T>) -> (Array2<T>, BatchNormCache<T>) {
        let n = T::of(z.nrows() as f64);
        let mean = z.sum_axis(Axis(0)) / n;
        let mut centered = z - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let eps = T::of(self.eps);
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
        centered *= &inv_std;
        let xhat = centered;
        let mut y = &xhat * &self.gamma;
        y += &self.beta;

        let m = T::of(self.momentum);
        let one_minus = T::one() - m;
        Zip::from(&mut self.running_mean)
            .and(&mean)
            .for_each(|r, &b| *r = m * *r + one_minus * b);
        Zip::from(&mut self.running_var)
            .and(&var)
            .for_each(|r, &b| *r = m * *r + one_minus * b);
        (y, BatchNormCache { xhat, inv_std })
    }

    pub fn forward_infer(&self, z: &Array2<T>) -> Array2<T> {
        let eps = T::of(self.eps);
        let scale = Zip::from(&self.gamma)
            .and(&self.running_var)
            .map_collect(|&g, &v| g / (v + eps).sqrt());
        let shift = Zip::from(&self.beta)
            .and(&self.running_mean)
            .and(&scale)
            .map_collect(|&b, &m, &s| b - m * s);
        let mut y = z * &scale;
        y += &shift;
        y
    }

    /// Returns `(dz, dgamma, dbeta)` for upstream gradient `dy`.
    pub fn backward(
        &self,
        cache: &BatchNormCache<T>,
        dy: &Array2<T>,
    ) -> (Array2<T>, Array1<T>, Array1<T>) {
        let n = T::of(dy.nrows() as f64);
        let dbeta = dy.sum_axis(Axis(0));
        let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
        // dxhat = dy·γ;  dz = inv_std/N · (N·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
        // with Σdxhat = γ·dbeta and Σ(dxhat·xhat) = γ·dgamma.
        let sum_dxhat = &dbeta * &self.gamma;
        let sum_dxhat_xhat = &dgamma * &self.gamma;
        let mut dz = dy * &self.gamma;
        Zip::from(dz.rows_mut())
            .and(cache.xhat.rows())
            .for_each(|mut row, xhat| {
                Zip::from(&mut row)
                    .and(&xhat)
                    .and(&sum_dxhat)
                    .and(&sum_dxhat_xhat)
                    .and(&cache.inv_std)
                    .for_each(|d, &xh, &s1, &s2, &is| {
                        *d = is / n * (n * *d - s1 - xh * s2);
                    });
            });
        (dz, dgamma, dbeta)
    }
}

/// Inverted-dropout mask: kept units carry `1 / (1 - rate)`, dropped ones 0.
pub fn dropout_mask<T: Scalar>(
    shape: (usize, usize),
    rate: f64,
    rng: &mut SeededRng,
) -> Array2<T> {
    let keep = 1.0 - rate;
    let scale = T::of(1.0 / keep);
    // Compare against a 32-bit threshold: one draw per unit.
    let threshold = (keep * 4_294_967_296.0) as u64;
    Array2::from_shape_simple_fn(shape, || {
        if u64::from(rng.random::<u32>()) < threshold {
            scale
        } else {
            T::zero()
        }
    })
}

pub fn relu_in_place<T: Scalar>(x: &mut Array2<T>) {
    x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Row-wise softmax with max-shift.
pub fn softmax<T: Scalar>(logits: ArrayView2<T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean cross-entropy of softmax(logits) against integer labels, and its
/// gradient `(softmax − onehot) / B`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: ArrayView2<T>,
    labels: &[usize],
) -> Result<(f64, Array2<T>), NnError> {
    let (batch, classes) = logits.dim();
    if labels.len() != batch {
        return Err(NnError::ShapeMismatch {
            what: "labels",
            expected: batch,
            got: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(NnError::LabelOutOfRange { label, classes });
    }
    let mut grad = softmax(logits);
    let mut loss = 0.0f64;
    let inv_b = T::of(1.0 / batch as f64);
    for (i, (mut row, &label)) in grad.rows_mut().into_iter().zip(labels).enumerate() {
        // log-sum-exp on the shifted logits for an accurate loss
        let logit_row = logits.row(i);
        let max = logit_row.fold(f64::NEG_INFINITY, |m, &v| m.max(v.to_f64_lossy()));
        let lse: f64 = logit_row
            .iter()
            .map(|&v| (v.to_f64_lossy() - max).exp())
            .sum::<f64>()
            .ln();
        loss += lse - (logit_row[label].to_f64_lossy() - max);
        row[label] -= T::one();
        row.mapv_inplace(|v| v * inv_b);
    }
    Ok((loss / batch as f64, grad))
}

/// Index of the largest entry per row; lowest index wins ties.
pub fn argmax_rows<T: Scalar>(logits: ArrayView2<T>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
