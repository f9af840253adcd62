//! Finite-difference verification of [`Mlp::backward`] at `f64`.

use ndarray::ArrayView2;

use super::{layers::softmax_cross_entropy, Mlp, NnError};
use crate::rng;

/// Worst disagreement between analytic and numeric gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `(tensor, element)` in canonical parameter order.
    pub worst_at: (usize, usize),
    pub checked: usize,
}

fn batch_loss(model: &Mlp<f64>, x: ArrayView2<f64>, labels: &[usize]) -> Result<f64, NnError> {
    // Dropout is disabled by the caller, so the stream is never consulted.
    let mut scratch = model.clone();
    let (logits, _) = scratch.forward_train(x, &mut rng::seeded(0))?;
    Ok(softmax_cross_entropy(logits.view(), labels)?.0)
}

/// Compares every trainable parameter's analytic gradient with the central
/// difference `(L(p+h) − L(p−h)) / 2h` of the train-mode batch loss, with
/// dropout forced off. Relative error is `|a − n| / max(|a| + |n|, floor)`.
pub fn check_gradients(
    model: &Mlp<f64>,
    x: ArrayView2<f64>,
    labels: &[usize],
    h: f64,
    floor: f64,
) -> Result<GradCheck, NnError> {
    let mut base = model.clone();
    for block in &mut base.blocks {
        block.dropout = 0.0;
    }
    let analytic = {
        let mut m = base.clone();
        let (logits, cache) = m.forward_train(x, &mut rng::seeded(0))?;
        let (_, dlogits) = softmax_cross_entropy(logits.view(), labels)?;
        m.backward(&cache, dlogits.view())?
    };
    let analytic: Vec<Vec<f64>> = analytic.slices().iter().map(|s| s.to_vec()).collect();

    let mut out = GradCheck {
        max_rel_err: 0.0,
        worst_at: (0, 0),
        checked: 0,
    };
    for (t, grads) in analytic.iter().enumerate() {
        for (e, &a) in grads.iter().enumerate() {
            let mut probe = base.clone();
            let orig = probe.params()[t][e];
            probe.params_mut()[t][e] = orig + h;
            let up = batch_loss(&probe, x, labels)?;
            probe.params_mut()[t][e] = orig - h;
            let down = batch_loss(&probe, x, labels)?;
            let n = (up - down) / (2.0 * h);
            let rel = (a - n).abs() / (a.abs() + n.abs()).max(floor);
            if rel > out.max_rel_err {
                out.max_rel_err = rel;
                out.worst_at = (t, e);
            }
            out.checked += 1;
        }
    }
    Ok(out)
}
