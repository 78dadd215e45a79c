//! Sharpness-sensitive split of a mini-batch.

use super::config::check_probability;
use crate::error::{Error, Result};

/// Partition of a batch into the samples whose loss rose most under the
/// perturbation (`plus`) and the rest (`minus`). Both lists are in ascending
/// batch-row order.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBatch {
    pub plus_indices: Vec<usize>,
    pub minus_indices: Vec<usize>,
    /// Realized ratio `|plus| / b`.
    pub gamma: f64,
    /// Smallest loss increase inside `plus`.
    pub alpha: f64,
}

impl SplitBatch {
    pub fn batch_size(&self) -> usize {
        self.plus_indices.len() + self.minus_indices.len()
    }
}

/// `ceil(gamma * b)` clamped to `[1, b]`, robust to representation error in
/// `gamma * b` (e.g. `0.3 * 10` evaluating to `3.0000000000000004`).
pub fn selected_count(gamma: f64, b: usize) -> usize {
    let x = gamma * b as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * (b as f64).max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (k as usize).clamp(1, b)
}

/// Keeps the `ceil(γ b)` largest loss increases; ties go to the lower index.
pub fn sds_split(loss_increase: &[f64], gamma: f64) -> Result<SplitBatch> {
    if loss_increase.is_empty() {
        return Err(Error::Contract("cannot split an empty batch".into()));
    }
    check_probability("gamma", gamma)?;
    let b = loss_increase.len();
    let k = selected_count(gamma, b);
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| {
        loss_increase[j]
            .total_cmp(&loss_increase[i])
            .then(i.cmp(&j))
    });
    let alpha = loss_increase[order[k - 1]];
    let mut plus = order[..k].to_vec();
    let mut minus = order[k..].to_vec();
    plus.sort_unstable();
    minus.sort_unstable();
    Ok(SplitBatch {
        plus_indices: plus,
        minus_indices: minus,
        gamma: k as f64 / b as f64,
        alpha,
    })
}
