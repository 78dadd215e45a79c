//! One training iteration for each strategy, and the shared descent kernel.

use std::time::Instant;

use rand::Rng;

use super::config::OptimConfig;
use super::perturbation::{epsilon_hat, sample_mask, swp_perturbation, GradientMask, Perturbation};
use super::selection::{sds_split, SplitBatch};
use crate::error::Result;
use crate::model::{ForwardPass, GradSet, Objective, ParamSet};
use crate::tape::GradRequest;
use crate::tensor::{mean_over, Tensor};

/// Wall-clock seconds spent in each phase of a step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    pub f1: f64,
    pub b1: f64,
    pub select: f64,
    pub f2: f64,
    pub b2: f64,
    pub update: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.f1 + self.b1 + self.select + self.f2 + self.b2 + self.update
    }

    pub fn accumulate(&mut self, other: &PhaseTimes) {
        self.f1 += other.f1;
        self.b1 += other.b1;
        self.select += other.select;
        self.f2 += other.f2;
        self.b2 += other.b2;
        self.update += other.update;
    }
}

/// Per-iteration telemetry. Sharpness values are means of per-sample loss
/// increases over the named subset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    /// `L_B(θ)`.
    pub loss: f64,
    /// `L_B(θ + ε)`.
    pub perturbed_loss: Option<f64>,
    /// `R_B`.
    pub sharpness: Option<f64>,
    pub loss_plus: Option<f64>,
    pub loss_minus: Option<f64>,
    pub perturbed_loss_plus: Option<f64>,
    pub perturbed_loss_minus: Option<f64>,
    pub sharpness_plus: Option<f64>,
    pub sharpness_minus: Option<f64>,
    pub realized_gamma: Option<f64>,
    pub mask_density: Option<f64>,
    pub cos_plus: Option<f64>,
    pub cos_minus: Option<f64>,
    pub cos_rand: Option<f64>,
    pub times: PhaseTimes,
    /// Wall-clock seconds of the whole step.
    pub step_time: f64,
}

/// Optimizer state carried between steps.
#[derive(Debug, Clone, Default)]
pub struct OptimState {
    velocity: Option<Vec<Tensor>>,
    pub steps: u64,
}

impl OptimState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Result of one step: the new parameters, its record, and for SAM-type
/// steps the perturbation used and (ESAM) the batch split.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub params: ParamSet,
    pub record: StepRecord,
    pub perturbation: Option<Perturbation>,
    pub split: Option<SplitBatch>,
}

/// Heavy-ball descent: `v ← μ v + g`, `θ ← θ − η (v + λ θ)`.
pub fn weight_update(
    params: &ParamSet,
    grad: &GradSet,
    cfg: &OptimConfig,
    state: &mut OptimState,
) -> Result<ParamSet> {
    params.check_structure(&grad.units)?;
    let velocity = match state.velocity.take() {
        Some(v) if cfg.momentum > 0.0 => v
            .iter()
            .zip(&grad.units)
            .map(|(v, g)| g.add_scaled(v, cfg.momentum))
            .collect(),
        _ => grad.units.clone(),
    };
    let next = params.map_units(|i, theta| {
        let step = velocity[i].add_scaled(theta, cfg.weight_decay);
        theta.add_scaled(&step, -cfg.eta)
    });
    state.velocity = Some(velocity);
    state.steps += 1;
    Ok(next)
}

fn seconds(since: Instant) -> f64 {
    since.elapsed().as_secs_f64()
}

/// Plain SGD step: one forward and backward at `θ`.
pub fn sgd_step<O: Objective>(
    params: &ParamSet,
    objective: &O,
    cfg: &OptimConfig,
    state: &mut OptimState,
) -> Result<StepOutcome> {
    let start = Instant::now();
    let mut times = PhaseTimes::default();

    let t = Instant::now();
    let mut pass = objective.forward(params)?;
    times.f2 = seconds(t);

    let t = Instant::now();
    let grad = pass.backward(None, &GradRequest::full())?;
    times.b2 = seconds(t);

    let t = Instant::now();
    let next = weight_update(params, &grad, cfg, state)?;
    times.update = seconds(t);

    let record = StepRecord {
        step: state.steps - 1,
        loss: pass.loss(),
        times,
        step_time: seconds(start),
        ..StepRecord::default()
    };
    Ok(StepOutcome {
        params: next,
        record,
        perturbation: None,
        split: None,
    })
}

/// SAM step: ascend to `θ + ε̂`, then descend with the gradient there.
pub fn sam_step<O: Objective>(
    params: &ParamSet,
    objective: &O,
    cfg: &OptimConfig,
    state: &mut OptimState,
) -> Result<StepOutcome> {
    let start = Instant::now();
    let mut times = PhaseTimes::default();

    let t = Instant::now();
    let mut pass = objective.forward(params)?;
    times.f1 = seconds(t);

    let t = Instant::now();
    let g1 = pass.backward(None, &GradRequest::full())?;
    let eps = epsilon_hat(&g1, cfg.rho, cfg.epsilon_scale)?;
    times.b1 = seconds(t);

    let t = Instant::now();
    let perturbed = params.offset(&eps.units, 1.0)?;
    let mut pass2 = objective.forward(&perturbed)?;
    times.f2 = seconds(t);

    let t = Instant::now();
    let g2 = pass2.backward(None, &GradRequest::full())?;
    times.b2 = seconds(t);

    let t = Instant::now();
    let next = weight_update(params, &g2, cfg, state)?;
    times.update = seconds(t);

    let increase = loss_increase(pass.per_sample(), pass2.per_sample());
    let record = StepRecord {
        step: state.steps - 1,
        loss: pass.loss(),
        perturbed_loss: Some(pass2.loss()),
        sharpness: Some(mean_over(&increase, None)),
        times,
        step_time: seconds(start),
        ..StepRecord::default()
    };
    Ok(StepOutcome {
        params: next,
        record,
        perturbation: Some(eps),
        split: None,
    })
}

/// ESAM step with a freshly sampled gradient mask.
pub fn esam_step<O: Objective, R: Rng + ?Sized>(
    params: &ParamSet,
    objective: &O,
    cfg: &OptimConfig,
    rng: &mut R,
    state: &mut OptimState,
) -> Result<StepOutcome> {
    let mask = sample_mask(params, cfg.beta, cfg.mask_granularity, rng)?;
    esam_step_with_mask(params, objective, cfg, &mask, state)
}

/// ESAM step with a given mask.
///
/// The ascent step is `a = (m ⊙ ε̂) / β`. Per-sample losses at `θ` come from
/// the first forward pass, those at `θ + a` from a full second forward; the
/// descent gradient is back-propagated through the selected rows only.
pub fn esam_step_with_mask<O: Objective>(
    params: &ParamSet,
    objective: &O,
    cfg: &OptimConfig,
    mask: &GradientMask,
    state: &mut OptimState,
) -> Result<StepOutcome> {
    let start = Instant::now();
    let mut times = PhaseTimes::default();

    let t = Instant::now();
    let mut pass = objective.forward(params)?;
    times.f1 = seconds(t);

    let t = Instant::now();
    let g1 = pass.backward(None, &GradRequest::full())?;
    let eps = epsilon_hat(&g1, cfg.rho, cfg.epsilon_scale)?;
    let a = swp_perturbation(&eps, mask, cfg.beta)?;
    times.b1 = seconds(t);

    let t = Instant::now();
    let perturbed = params.offset(&a.units, 1.0)?;
    let mut pass2 = objective.forward(&perturbed)?;
    times.f2 = seconds(t);

    let t = Instant::now();
    let clean = pass.per_sample();
    let pert = pass2.per_sample();
    let increase = loss_increase(clean, pert);
    let split = sds_split(&increase, cfg.gamma)?;
    times.select = seconds(t);

    let subset_mean = |values: &[f64], rows: &[usize]| {
        (!rows.is_empty()).then(|| mean_over(values, Some(rows)))
    };
    let (plus, minus) = (&split.plus_indices, &split.minus_indices);
    let mut record = StepRecord {
        loss: mean_over(clean, None),
        perturbed_loss: Some(mean_over(pert, None)),
        sharpness: Some(mean_over(&increase, None)),
        loss_plus: subset_mean(clean, plus),
        loss_minus: subset_mean(clean, minus),
        perturbed_loss_plus: subset_mean(pert, plus),
        perturbed_loss_minus: subset_mean(pert, minus),
        sharpness_plus: subset_mean(&increase, plus),
        sharpness_minus: subset_mean(&increase, minus),
        realized_gamma: Some(split.gamma),
        mask_density: Some(mask.density()),
        ..StepRecord::default()
    };

    let t = Instant::now();
    let rows = (!minus.is_empty()).then_some(plus.as_slice());
    let g2 = pass2.backward(rows, &GradRequest::full())?;
    times.b2 = seconds(t);

    let t = Instant::now();
    let next = weight_update(params, &g2, cfg, state)?;
    times.update = seconds(t);

    record.step = state.steps - 1;
    record.times = times;
    record.step_time = seconds(start);
    Ok(StepOutcome {
        params: next,
        record,
        perturbation: Some(a),
        split: Some(split),
    })
}

fn loss_increase(clean: &[f64], perturbed: &[f64]) -> Vec<f64> {
    perturbed.iter().zip(clean).map(|(p, c)| p - c).collect()
}
