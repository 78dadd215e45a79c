use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the first-order ascent step is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonScale {
    /// `ρ g / ‖g‖₂`: the perturbation lies on the sphere of radius ρ.
    #[default]
    Normalized,
    /// `ρ g`, without normalization.
    Raw,
}

/// What one Bernoulli draw of the gradient mask covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskGranularity {
    /// One draw per parameter unit (a whole weight matrix or bias vector).
    #[default]
    PerUnit,
    /// One draw per scalar parameter.
    PerScalar,
}

/// Hyperparameters shared by SGD, SAM and ESAM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    /// Learning rate.
    pub eta: f64,
    /// Neighborhood radius of the ascent step.
    pub rho: f64,
    /// Probability that a unit takes part in the weight perturbation.
    pub beta: f64,
    /// Fraction of the batch kept for the descent gradient.
    pub gamma: f64,
    pub epsilon_scale: EpsilonScale,
    pub mask_granularity: MaskGranularity,
    pub weight_decay: f64,
    pub momentum: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            eta: 0.05,
            rho: 0.05,
            beta: 0.6,
            gamma: 0.5,
            epsilon_scale: EpsilonScale::Normalized,
            mask_granularity: MaskGranularity::PerUnit,
            weight_decay: 1e-3,
            momentum: 0.9,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::config("eta", "must be a finite non-negative number"));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::config("rho", "must be > 0"));
        }
        check_probability("beta", self.beta)?;
        check_probability("gamma", self.gamma)?;
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::config("weight_decay", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

pub(crate) fn check_probability(field: &str, value: f64) -> Result<()> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must lie in (0, 1], got {value}")))
    }
}
