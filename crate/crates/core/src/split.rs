//! Stratified fit/validation/test partitioning.
//!
//! Per class, indices are shuffled once with the seeded stream. The first
//! `q_c` go to test, the next `v_c` to validation and the rest to fit. Test
//! and validation quotas are apportioned by largest remainder so that the
//! totals are exactly `round(test_fraction * N)` and
//! `round(val_fraction * |train pool|)` while each class gets either the floor
//! or the ceiling of its proportional share.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Stream id for the split shuffle.
const SPLIT_STREAM: u64 = 0x5711;

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid fraction {name}={value}")]
    BadFraction { name: &'static str, value: f64 },
    #[error("label {label} is not below num_classes={num_classes}")]
    LabelOutOfRange { label: usize, num_classes: usize },
}

/// Disjoint index sets into a dataset, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fit_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
    pub val_stratified: bool,
}

impl SplitPlan {
    pub fn total(&self) -> usize {
        self.fit_indices.len() + self.val_indices.len() + self.test_indices.len()
    }

    pub fn summary(&self) -> SplitSummary {
        SplitSummary {
            fit: self.fit_indices.len(),
            val: self.val_indices.len(),
            test: self.test_indices.len(),
            seed: self.seed,
            val_stratified: self.val_stratified,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub fit: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
    pub val_stratified: bool,
}

/// Splits `total` across groups proportionally to `sizes`, each group getting
/// the floor or ceiling of its exact share. Leftover units go to the largest
/// fractional parts, lowest group index first on ties.
pub fn apportion(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    // Exact integer arithmetic: share_c = sizes_c * total / n.
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| s * total / n).collect();
    let remainders: Vec<usize> = sizes.iter().map(|&s| s * total % n).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]).then(a.cmp(&b)));
    for &c in order.iter().take(total - assigned) {
        quotas[c] += 1;
    }
    quotas
}

fn rounded_share(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

/// Stratified 3-way split of `labels` into fit, validation and test sets.
pub fn stratified_split(
    labels: &[u8],
    num_classes: usize,
    test_fraction: f64,
    val_fraction_of_train: f64,
    seed: u64,
) -> Result<SplitPlan, SplitError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(SplitError::BadFraction {
            name: "test_fraction",
            value: test_fraction,
        });
    }
    if !(0.0..1.0).contains(&val_fraction_of_train) {
        return Err(SplitError::BadFraction {
            name: "val_fraction_of_train",
            value: val_fraction_of_train,
        });
    }
    if labels.is_empty() {
        return Err(SplitError::EmptyDataset);
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        let l = usize::from(l);
        if l >= num_classes {
            return Err(SplitError::LabelOutOfRange {
                label: l,
                num_classes,
            });
        }
        by_class[l].push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(SplitError::EmptyClass(c));
    }

    let mut stream = rng::substream(seed, SPLIT_STREAM);
    for members in &mut by_class {
        rng::shuffle(members, &mut stream);
    }

    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let test_quota = apportion(&sizes, rounded_share(test_fraction, labels.len()));
    let pool_sizes: Vec<usize> = sizes.iter().zip(&test_quota).map(|(s, q)| s - q).collect();
    let pool_total: usize = pool_sizes.iter().sum();
    let val_quota = apportion(&pool_sizes, rounded_share(val_fraction_of_train, pool_total));

    let mut plan = SplitPlan {
        fit_indices: Vec::new(),
        val_indices: Vec::new(),
        test_indices: Vec::new(),
        seed,
        val_stratified: true,
    };
    for (c, members) in by_class.iter().enumerate() {
        let (test, rest) = members.split_at(test_quota[c]);
        let (val, fit) = rest.split_at(val_quota[c]);
        plan.test_indices.extend_from_slice(test);
        plan.val_indices.extend_from_slice(val);
        plan.fit_indices.extend_from_slice(fit);
    }
    plan.fit_indices.sort_unstable();
    plan.val_indices.sort_unstable();
    plan.test_indices.sort_unstable();
    Ok(plan)
}

/// Draws a stratified subset of exactly `size` indices (sorted).
pub fn stratified_subset(
    labels: &[u8],
    num_classes: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<usize>, SplitError> {
    if size == 0 || size >= labels.len() {
        return Err(SplitError::BadFraction {
            name: "subset_size",
            value: size as f64,
        });
    }
    let plan = stratified_split(
        labels,
        num_classes,
        size as f64 / labels.len() as f64,
        0.0,
        seed,
    )?;
    Ok(plan.test_indices)
}
