//! The training loop and its artifacts (`steps.csv`, `summary.json`, `params.json`).

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use esam::data::batch_iter;
use esam::diagnostics::subset_gradient_cosines;
use esam::model::{accuracy, init_params, ParamSet, Snapshot};
use esam::optim::{esam_step, sam_step, sgd_step, OptimState, PhaseTimes, StepOutcome, StepRecord};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{prepare_data, ExperimentConfig, Strategy};

/// Stream ids of the generators derived from the run seed.
const MASK_STREAM: u64 = 1;
const COSINE_STREAM: u64 = 2;

/// Summed phase times of a run, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseBreakdown {
    pub f1: f64,
    pub b1: f64,
    pub select: f64,
    pub f2: f64,
    pub b2: f64,
    pub update: f64,
}

impl From<PhaseTimes> for PhaseBreakdown {
    fn from(t: PhaseTimes) -> Self {
        Self {
            f1: t.f1,
            b1: t.b1,
            select: t.select,
            f2: t.f2,
            b2: t.b2,
            update: t.update,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    pub seed: u64,
    pub epochs: usize,
    pub steps: u64,
    pub initial_test_accuracy: f64,
    pub final_train_accuracy: f64,
    pub final_test_accuracy: f64,
    pub best_test_accuracy: f64,
    /// 0 when no epoch beat the initial model.
    pub best_epoch: usize,
    pub samples_per_second: f64,
    pub total_step_time: f64,
    pub phase_times: PhaseBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub summary: RunSummary,
    pub records: Vec<StepRecord>,
    pub params: ParamSet,
}

/// Columns of `steps.csv`. The `time_` columns are wall-clock seconds and the
/// only ones that differ between repeated runs.
pub const STEP_COLUMNS: [&str; 23] = [
    "step",
    "epoch",
    "loss",
    "perturbed_loss",
    "sharpness",
    "loss_plus",
    "loss_minus",
    "perturbed_loss_plus",
    "perturbed_loss_minus",
    "sharpness_plus",
    "sharpness_minus",
    "realized_gamma",
    "mask_density",
    "cos_plus",
    "cos_minus",
    "cos_rand",
    "time_f1",
    "time_b1",
    "time_select",
    "time_f2",
    "time_b2",
    "time_update",
    "time_step",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn record_row(r: &StepRecord) -> Vec<String> {
    let t = &r.times;
    vec![
        r.step.to_string(),
        r.epoch.to_string(),
        r.loss.to_string(),
        opt(r.perturbed_loss),
        opt(r.sharpness),
        opt(r.loss_plus),
        opt(r.loss_minus),
        opt(r.perturbed_loss_plus),
        opt(r.perturbed_loss_minus),
        opt(r.sharpness_plus),
        opt(r.sharpness_minus),
        opt(r.realized_gamma),
        opt(r.mask_density),
        opt(r.cos_plus),
        opt(r.cos_minus),
        opt(r.cos_rand),
        t.f1.to_string(),
        t.b1.to_string(),
        t.select.to_string(),
        t.f2.to_string(),
        t.b2.to_string(),
        t.update.to_string(),
        r.step_time.to_string(),
    ]
}

pub fn write_steps_csv<W: Write>(records: &[StepRecord], out: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STEP_COLUMNS)?;
    for r in records {
        w.write_record(record_row(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Trains per `cfg`, evaluating train and test accuracy after every epoch.
/// Writes the artifacts when `cfg.out` is set.
pub fn run_train(cfg: &ExperimentConfig) -> anyhow::Result<TrainRun> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let spec = cfg.spec()?;
    let optim = cfg.effective_optim();
    let mut params = init_params(&spec, cfg.seed);
    let mut state = OptimState::new();
    let mut mask_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    mask_rng.set_stream(MASK_STREAM);
    let mut cosine_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    cosine_rng.set_stream(COSINE_STREAM);

    let test_acc = |p: &ParamSet| accuracy(p, &data.test.features, &data.test.labels);
    let initial_test = test_acc(&params)?;
    let (mut best, mut best_epoch) = (initial_test, 0);
    let mut final_test = initial_test;
    let mut records = Vec::new();
    let mut samples = 0usize;
    let mut totals = PhaseTimes::default();
    let mut total_time = 0.0;

    for epoch in 0..cfg.epochs {
        for batch in batch_iter(&data.train, cfg.batch_size, epoch as u64, cfg.seed)? {
            let StepOutcome {
                params: next,
                mut record,
                perturbation,
                split,
            } = match cfg.strategy {
                Strategy::Sgd => sgd_step(&params, &batch, &optim, &mut state)?,
                Strategy::Sam => sam_step(&params, &batch, &optim, &mut state)?,
                _ => esam_step(&params, &batch, &optim, &mut mask_rng, &mut state)?,
            };
            if cfg.record_cosines {
                if let (Some(eps), Some(split)) = (&perturbation, &split) {
                    if !split.minus_indices.is_empty() {
                        let c = subset_gradient_cosines(&params, eps, split, &batch, &mut cosine_rng)?;
                        record.cos_plus = Some(c.plus);
                        record.cos_minus = c.minus;
                        record.cos_rand = Some(c.random);
                    }
                }
            }
            record.epoch = epoch as u64;
            samples += batch.len();
            totals.accumulate(&record.times);
            total_time += record.step_time;
            records.push(record);
            params = next;
        }
        final_test = test_acc(&params)?;
        if final_test > best {
            best = final_test;
            best_epoch = epoch + 1;
        }
    }

    let summary = RunSummary {
        strategy: cfg.strategy.name().to_string(),
        seed: cfg.seed,
        epochs: cfg.epochs,
        steps: state.steps,
        initial_test_accuracy: initial_test,
        final_train_accuracy: accuracy(&params, &data.train.features, &data.train.labels)?,
        final_test_accuracy: final_test,
        best_test_accuracy: best,
        best_epoch,
        samples_per_second: if total_time > 0.0 {
            samples as f64 / total_time
        } else {
            0.0
        },
        total_step_time: total_time,
        phase_times: totals.into(),
    };
    let run = TrainRun {
        summary,
        records,
        params,
    };
    if let Some(dir) = &cfg.out {
        write_artifacts(dir, cfg, &run)?;
    }
    Ok(run)
}

fn write_artifacts(dir: &Path, cfg: &ExperimentConfig, run: &TrainRun) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let steps = fs::File::create(dir.join("steps.csv"))?;
    write_steps_csv(&run.records, std::io::BufWriter::new(steps))?;
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&run.summary)? + "\n",
    )?;
    Snapshot::capture(&run.params, cfg.seed)?.save(&dir.join("params.json"))?;
    fs::write(dir.join("config.json"), cfg.to_json() + "\n")?;
    Ok(())
}
