//! Wall-clock savings of skipping backward work for unselected layers.
//!
//! Each layer of a serial MLP (its weight and bias) is one selectable unit.
//! A masked backward computes weight gradients only for selected layers and
//! stops propagating below the shallowest one.

use std::time::Instant;

use anyhow::ensure;
use esam::data::Dataset;
use esam::diagnostics::{timing_fit, TimingMeasurement, TimingModel};
use esam::model::{init_params, ForwardPass, MlpSpec, Objective};
use esam::tape::GradRequest;
use esam::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::stats::median;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingOptions {
    pub width: usize,
    pub depths: Vec<usize>,
    pub betas: Vec<f64>,
    /// Medians are taken over this many repetitions per cell.
    pub repeats: usize,
    /// Random masks timed per repetition.
    pub masks: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TimingOptions {
    fn default() -> Self {
        Self {
            width: 128,
            depths: vec![8, 16, 32],
            betas: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            repeats: 5,
            masks: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

fn serial_batch(width: usize, b: usize, rng: &mut ChaCha8Rng) -> anyhow::Result<esam::data::Batch> {
    let features: Vec<f64> = (0..b * width).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..width)).collect();
    Ok(Dataset::new(Tensor::new(vec![b, width], features)?, labels, width)?.full_batch())
}

/// Median saved fraction of forward+backward time for one `(N, β)` cell.
fn measure_cell(
    n: usize,
    beta: f64,
    opts: &TimingOptions,
    rng: &mut ChaCha8Rng,
) -> anyhow::Result<f64> {
    let spec = MlpSpec::new(vec![opts.width; n + 1])?;
    let params = init_params(&spec, opts.seed);
    let batch = serial_batch(opts.width, opts.batch_size, rng)?;
    let run = |request: &GradRequest| -> anyhow::Result<f64> {
        let t = Instant::now();
        let mut pass = batch.forward(&params)?;
        if request.units.as_ref().is_none_or(|u| u.iter().any(|&s| s)) {
            pass.backward(None, request)?;
        }
        Ok(t.elapsed().as_secs_f64())
    };
    run(&GradRequest::full())?;

    let mut saved = Vec::with_capacity(opts.repeats);
    for _ in 0..opts.repeats {
        let (mut full, mut masked) = (0.0, 0.0);
        for _ in 0..opts.masks {
            let layers: Vec<bool> = (0..n).map(|_| rng.random_bool(beta)).collect();
            let units = layers.iter().flat_map(|&s| [s, s]).collect();
            full += run(&GradRequest::full())?;
            masked += run(&GradRequest::units(units))?;
        }
        saved.push(1.0 - masked / full);
    }
    Ok(median(&saved))
}

/// Measures every `(N, β)` cell and fits the cost model.
pub fn run_timing_experiment(opts: &TimingOptions) -> anyhow::Result<TimingModel> {
    ensure!(opts.repeats >= 1 && opts.masks >= 1, "repeats and masks must be >= 1");
    ensure!(opts.width >= 2, "width must be >= 2");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut measurements = Vec::new();
    for &n in &opts.depths {
        for &beta in &opts.betas {
            let saved_fraction = measure_cell(n, beta, opts, &mut rng)?;
            measurements.push(TimingMeasurement {
                n,
                beta,
                saved_fraction,
            });
        }
    }
    let mut model = timing_fit(&measurements)?;
    model.mean_units_per_layer = 1.0;
    Ok(model)
}
