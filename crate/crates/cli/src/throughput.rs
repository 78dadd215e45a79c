//! B2 cost of data selection as a function of the selected ratio γ.

use anyhow::{bail, ensure};
use esam::model::init_params;
use esam::optim::{esam_step_with_mask, GradientMask, OptimState};
use serde::{Deserialize, Serialize};

use crate::config::{prepare_data, ExperimentConfig};
use crate::stats::{linear_fit, median};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputRow {
    pub gamma: f64,
    pub median_b2: f64,
    pub median_f2: f64,
    pub median_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub batch_size: usize,
    pub layers: Vec<usize>,
    pub repeats: usize,
    pub rows: Vec<ThroughputRow>,
    /// Fit of median B2 time against `1 − γ`; absent for a single γ.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
}

/// Times ESAM steps on one fixed batch for every γ, with weight perturbation
/// disabled (β = 1). Repeats are interleaved across γ values so slow drifts
/// affect all of them alike.
pub fn run_throughput(cfg: &ExperimentConfig, gammas: &[f64], repeats: usize) -> anyhow::Result<ThroughputReport> {
    ensure!(repeats >= 3, "repeats must be >= 3, got {repeats}");
    if gammas.is_empty() {
        bail!("no gamma values given");
    }
    let data = prepare_data(cfg)?;
    ensure!(
        data.train.len() >= cfg.batch_size,
        "training split has {} samples, batch needs {}",
        data.train.len(),
        cfg.batch_size
    );
    let indices: Vec<usize> = (0..cfg.batch_size).collect();
    let batch = data.train.batch(&indices)?;
    let params = init_params(&cfg.spec()?, cfg.seed);
    let mask = GradientMask::per_unit(vec![true; params.num_units()], 1.0);

    let configs: Vec<_> = gammas
        .iter()
        .map(|&gamma| {
            let mut o = cfg.optim.clone();
            o.beta = 1.0;
            o.gamma = gamma;
            o.validate().map(|_| o)
        })
        .collect::<Result<_, _>>()?;

    // One untimed pass per setting to warm caches and the allocator.
    for o in &configs {
        esam_step_with_mask(&params, &batch, o, &mask, &mut OptimState::new())?;
    }
    let mut samples = vec![Vec::with_capacity(repeats); configs.len()];
    for _ in 0..repeats {
        for (i, o) in configs.iter().enumerate() {
            let r = esam_step_with_mask(&params, &batch, o, &mask, &mut OptimState::new())?.record;
            samples[i].push(r);
        }
    }
    let rows: Vec<ThroughputRow> = gammas
        .iter()
        .zip(&samples)
        .map(|(&gamma, recs)| {
            let col = |f: &dyn Fn(&esam::optim::StepRecord) -> f64| median(&recs.iter().map(f).collect::<Vec<_>>());
            ThroughputRow {
                gamma,
                median_b2: col(&|r| r.times.b2),
                median_f2: col(&|r| r.times.f2),
                median_step: col(&|r| r.step_time),
            }
        })
        .collect();
    let x: Vec<f64> = rows.iter().map(|r| 1.0 - r.gamma).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.median_b2).collect();
    let fit = linear_fit(&x, &y);
    Ok(ThroughputReport {
        batch_size: cfg.batch_size,
        layers: cfg.layers.clone(),
        repeats,
        rows,
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
        r_squared: fit.map(|f| f.2),
    })
}
