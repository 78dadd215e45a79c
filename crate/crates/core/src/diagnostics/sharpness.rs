use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{loss_and_grad, ForwardPass, GradSet, Objective, ParamSet};
use crate::optim::{Perturbation, SplitBatch};
use crate::tape::GradRequest;
use crate::tensor::mean_over;

/// `L(θ + ε) − L(θ)`.
pub fn sharpness<O: Objective>(params: &ParamSet, objective: &O, eps: &Perturbation) -> Result<f64> {
    let clean = objective.forward(params)?.loss();
    let perturbed = objective.forward(&params.offset(&eps.units, 1.0)?)?.loss();
    Ok(perturbed - clean)
}

/// Subset means of the per-sample losses at `θ` and `θ + ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitLosses {
    pub plus_clean: f64,
    pub minus_clean: Option<f64>,
    pub plus_perturbed: f64,
    pub minus_perturbed: Option<f64>,
}

impl SplitLosses {
    pub fn sharpness_plus(&self) -> f64 {
        self.plus_perturbed - self.plus_clean
    }

    pub fn sharpness_minus(&self) -> Option<f64> {
        Some(self.minus_perturbed? - self.minus_clean?)
    }
}

/// The four subset losses `L±(θ)`, `L±(θ + ε)`; the minus side is absent
/// when the split kept the whole batch.
pub fn split_losses<O: Objective>(
    params: &ParamSet,
    eps: &Perturbation,
    split: &SplitBatch,
    objective: &O,
) -> Result<SplitLosses> {
    if split.batch_size() != objective.num_samples() {
        return Err(Error::Contract(format!(
            "split covers {} samples, batch has {}",
            split.batch_size(),
            objective.num_samples()
        )));
    }
    let clean = objective.forward(params)?;
    let pert = objective.forward(&params.offset(&eps.units, 1.0)?)?;
    let minus = &split.minus_indices;
    let subset = |v: &[f64], rows: &[usize]| (!rows.is_empty()).then(|| mean_over(v, Some(rows)));
    Ok(SplitLosses {
        plus_clean: mean_over(clean.per_sample(), Some(&split.plus_indices)),
        minus_clean: subset(clean.per_sample(), minus),
        plus_perturbed: mean_over(pert.per_sample(), Some(&split.plus_indices)),
        minus_perturbed: subset(pert.per_sample(), minus),
    })
}

/// Cosine similarity of two gradients over the flattened parameters.
pub fn cosine(a: &GradSet, b: &GradSet) -> Result<f64> {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedCosine("zero-norm gradient".into()));
    }
    Ok(a.dot(b) / (na * nb))
}

/// Cosines between subset gradients and the full-batch gradient at `θ + ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetCosines {
    pub plus: f64,
    /// Absent when the split has an empty minus side.
    pub minus: Option<f64>,
    /// A uniformly drawn subset of the same size as `plus`.
    pub random: f64,
}

pub fn subset_gradient_cosines<O: Objective, R: Rng + ?Sized>(
    params: &ParamSet,
    eps: &Perturbation,
    split: &SplitBatch,
    objective: &O,
    rng: &mut R,
) -> Result<SubsetCosines> {
    let b = objective.num_samples();
    if split.batch_size() != b {
        return Err(Error::Contract(format!(
            "split covers {} samples, batch has {b}",
            split.batch_size()
        )));
    }
    let mut pass = objective.forward(&params.offset(&eps.units, 1.0)?)?;
    let request = GradRequest::full();
    let full = pass.backward(None, &request)?;
    let plus = pass.backward(Some(&split.plus_indices), &request)?;
    let minus = if split.minus_indices.is_empty() {
        None
    } else {
        Some(pass.backward(Some(&split.minus_indices), &request)?)
    };
    let mut random_rows = sample(rng, b, split.plus_indices.len()).into_vec();
    random_rows.sort_unstable();
    let random = pass.backward(Some(&random_rows), &request)?;
    Ok(SubsetCosines {
        plus: cosine(&plus, &full)?,
        minus: minus.map(|g| cosine(&g, &full)).transpose()?,
        random: cosine(&random, &full)?,
    })
}

/// Linearity defect `|L(θ + ε) − L(θ) − εᵀ ∇L(θ)|`.
pub fn linearity<O: Objective>(params: &ParamSet, eps: &Perturbation, objective: &O) -> Result<f64> {
    let (clean, grad) = loss_and_grad(objective, params)?;
    let perturbed = objective.forward(&params.offset(&eps.units, 1.0)?)?.loss();
    Ok((perturbed - clean - eps.dot(&grad)).abs())
}
