//! SGD, SAM and ESAM.
//!
//! All three strategies share [`weight_update`] (heavy-ball momentum with
//! weight decay). SAM adds an ascent step `ε̂` before the descent gradient;
//! ESAM perturbs only a Bernoulli-selected subset of units (rescaled by
//! `1/β`) and takes the descent gradient on the `⌈γ b⌉` samples whose loss
//! rose most under that perturbation.

mod config;
mod perturbation;
mod selection;
mod step;

pub use config::{EpsilonScale, MaskGranularity, OptimConfig};
pub use perturbation::{epsilon_hat, sample_mask, swp_perturbation, GradientMask, Perturbation};
pub use selection::{sds_split, selected_count, SplitBatch};
pub use step::{
    esam_step, esam_step_with_mask, sam_step, sgd_step, weight_update, OptimState, PhaseTimes,
    StepOutcome, StepRecord,
};
