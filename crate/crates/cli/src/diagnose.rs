//! Training-run statistics of the split and the linearity of SWP perturbations.

use anyhow::ensure;
use esam::data::batch_iter;
use esam::diagnostics::linearity;
use esam::model::{loss_and_grad, ParamSet};
use esam::optim::{epsilon_hat, sample_mask, swp_perturbation, StepRecord};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{prepare_data, ExperimentConfig, Strategy};
use crate::stats::median;
use crate::train::run_train;

const LINEARITY_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassFraction {
    pub passed: usize,
    pub total: usize,
    pub fraction: f64,
}

impl PassFraction {
    fn count<'a>(values: impl Iterator<Item = Option<bool>> + 'a) -> Self {
        let (mut passed, mut total) = (0, 0);
        for ok in values.flatten() {
            total += 1;
            passed += usize::from(ok);
        }
        let fraction = if total == 0 { 0.0 } else { passed as f64 / total as f64 };
        Self {
            passed,
            total,
            fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityRow {
    pub beta: f64,
    pub median_zeta: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    /// Batches after the warm-up with `L⁻(θ) ≤ L⁺(θ)`.
    pub loss_order: PassFraction,
    /// Batches after the warm-up with `cos⁺ ≥ cos⁻`.
    pub cosine_order: PassFraction,
    pub linearity: Vec<LinearityRow>,
    /// Medians do not increase as β decreases along `linearity`.
    pub linearity_non_increasing: bool,
    pub final_test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseOptions {
    /// Epochs excluded from the pass fractions.
    pub warmup_epochs: usize,
    /// Listed from large to small.
    pub betas: Vec<f64>,
    pub linearity_batches: usize,
    pub masks_per_batch: usize,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self {
            warmup_epochs: 5,
            betas: vec![0.9, 0.6, 0.3],
            linearity_batches: 10,
            masks_per_batch: 10,
        }
    }
}

/// Split statistics of the records of one ESAM run.
pub fn split_statistics(records: &[StepRecord], warmup_epochs: usize) -> (PassFraction, PassFraction) {
    let late = || records.iter().filter(move |r| r.epoch >= warmup_epochs as u64);
    let losses = PassFraction::count(late().map(|r| Some(r.loss_minus? <= r.loss_plus?)));
    let cosines = PassFraction::count(late().map(|r| Some(r.cos_plus? >= r.cos_minus?)));
    (losses, cosines)
}

/// Median `ζ(a, B)` per β over `batches × masks` SWP perturbations of `params`.
pub fn linearity_table(
    cfg: &ExperimentConfig,
    params: &ParamSet,
    opts: &DiagnoseOptions,
) -> anyhow::Result<Vec<LinearityRow>> {
    let data = prepare_data(cfg)?;
    let batches: Vec<_> = batch_iter(&data.train, cfg.batch_size, cfg.epochs as u64, cfg.seed)?
        .take(opts.linearity_batches)
        .collect();
    ensure!(!batches.is_empty(), "no batches available for the linearity table");
    let mut eps_hats = Vec::with_capacity(batches.len());
    for batch in &batches {
        let (_, g) = loss_and_grad(batch, params)?;
        eps_hats.push(epsilon_hat(&g, cfg.optim.rho, cfg.optim.epsilon_scale)?);
    }
    let mut rows = Vec::new();
    for &beta in &opts.betas {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(LINEARITY_STREAM);
        let mut zetas = Vec::new();
        for (batch, eps) in batches.iter().zip(&eps_hats) {
            for _ in 0..opts.masks_per_batch {
                let mask = sample_mask(params, beta, cfg.optim.mask_granularity, &mut rng)?;
                let a = swp_perturbation(eps, &mask, beta)?;
                zetas.push(linearity(params, &a, batch)?);
            }
        }
        rows.push(LinearityRow {
            beta,
            median_zeta: median(&zetas),
            samples: zetas.len(),
        });
    }
    Ok(rows)
}

/// Trains an ESAM model with cosine recording, then reports the split
/// statistics and the linearity table.
pub fn run_diagnose(cfg: &ExperimentConfig, opts: &DiagnoseOptions) -> anyhow::Result<DiagnoseReport> {
    let mut cfg = cfg.clone();
    if !cfg.strategy.is_esam() {
        cfg.strategy = Strategy::Esam;
    }
    cfg.record_cosines = true;
    let run = run_train(&cfg)?;
    let (loss_order, cosine_order) = split_statistics(&run.records, opts.warmup_epochs);
    let linearity = linearity_table(&cfg, &run.params, opts)?;
    let linearity_non_increasing = linearity
        .windows(2)
        .all(|w| w[1].median_zeta <= w[0].median_zeta);
    Ok(DiagnoseReport {
        loss_order,
        cosine_order,
        linearity,
        linearity_non_increasing,
        final_test_accuracy: run.summary.final_test_accuracy,
    })
}
