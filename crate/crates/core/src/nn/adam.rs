//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use super::{NnError, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers per parameter tensor, allocated on the first step.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    /// Learning rate for the next step.
    pub alpha: f64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(alpha: f64, config: AdamConfig) -> Self {
        Self {
            config,
            alpha,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    /// `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`,
    /// `w ← w − α·m̂ / (√v̂ + ε)` with `m̂ = m/(1−β1ᵗ)`, `v̂ = v/(1−β2ᵗ)`.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<(), NnError> {
        if params.len() != grads.len() {
            return Err(NnError::ShapeMismatch {
                what: "tensor count",
                expected: params.len(),
                got: grads.len(),
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(NnError::ShapeMismatch {
                    what: "tensor length",
                    expected: p.len(),
                    got: g.len(),
                });
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
        {
            return Err(NnError::ShapeMismatch {
                what: "optimizer state",
                expected: self.m.len(),
                got: params.len(),
            });
        }

        self.t += 1;
        let t = self.t as i32;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let step_size = T::of(self.alpha / (1.0 - beta1.powi(t)));
        let inv_sqrt_bc2 = T::of(1.0 / (1.0 - beta2.powi(t)).sqrt());
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (c1, c2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let eps = T::of(eps);

        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut())
            {
                *m = b1 * *m + c1 * g;
                *v = b2 * *v + c2 * g * g;
                *w -= step_size * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}
