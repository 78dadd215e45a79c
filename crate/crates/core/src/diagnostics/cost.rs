//! Backward-pass savings of stochastic weight perturbation.
//!
//! With `K̄` units per layer each selected with probability β, the
//! pass-through of layer `n` is skippable when no unit at depth `<= n` was
//! selected, which happens with probability `(1−β)^{n K̄}`. Summed over the
//! layers this gives the saved fraction
//! `g(N, β) ≈ k₁ (1−β) + k₂ (1−β) / (N β)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed saving: `saved_fraction` of the backward work at depth `n`
/// and selection probability `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingMeasurement {
    pub n: usize,
    pub beta: f64,
    pub saved_fraction: f64,
}

/// Least-squares fit of `g(N, β) = k₁ (1−β) + k₂ (1−β)/(Nβ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingModel {
    pub k1: f64,
    pub k2: f64,
    pub r_squared: f64,
    pub mean_units_per_layer: f64,
    pub measurements: Vec<TimingMeasurement>,
}

impl TimingModel {
    pub fn predict(&self, n: usize, beta: f64) -> f64 {
        let [a, b] = basis(n, beta);
        self.k1 * a + self.k2 * b
    }
}

fn basis(n: usize, beta: f64) -> [f64; 2] {
    let keep = 1.0 - beta;
    [keep, keep / (n as f64 * beta)]
}

/// `(1−β)^{n K̄}`.
pub fn skip_probability_closed_form(n: usize, beta: f64, units_per_layer: usize) -> f64 {
    (1.0 - beta).powi((n * units_per_layer) as i32)
}

/// Monte Carlo estimate of the skip probability of every layer `1..=n_layers`.
pub fn swp_skip_probability(
    n_layers: usize,
    beta: f64,
    units_per_layer: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if trials == 0 {
        return Err(Error::config("trials", "must be >= 1"));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::config("beta", "must lie in (0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut skippable = vec![0u64; n_layers];
    for _ in 0..trials {
        for count in skippable.iter_mut() {
            let any_selected = (0..units_per_layer)
                .map(|_| rng.random_bool(beta))
                .fold(false, |acc, d| acc | d);
            if any_selected {
                break;
            }
            *count += 1;
        }
    }
    Ok(skippable
        .into_iter()
        .map(|c| c as f64 / trials as f64)
        .collect())
}

/// Fits `(k₁, k₂)` by least squares over the basis `{(1−β), (1−β)/(Nβ)}`.
///
/// `r_squared` is the centered coefficient of determination, floored at 0.
pub fn timing_fit(measurements: &[TimingMeasurement]) -> Result<TimingModel> {
    let mut distinct: Vec<(usize, u64)> = measurements
        .iter()
        .map(|m| (m.n, m.beta.to_bits()))
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Fit(format!(
            "need >= 3 distinct (N, beta) measurements, got {}",
            distinct.len()
        )));
    }
    if let Some(m) = measurements
        .iter()
        .find(|m| m.n == 0 || !(m.beta > 0.0 && m.beta <= 1.0) || !m.saved_fraction.is_finite())
    {
        return Err(Error::Fit(format!("invalid measurement {m:?}")));
    }

    let (mut s11, mut s12, mut s22, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for m in measurements {
        let [a, b] = basis(m.n, m.beta);
        s11 += a * a;
        s12 += a * b;
        s22 += b * b;
        t1 += a * m.saved_fraction;
        t2 += b * m.saved_fraction;
    }
    let det = s11 * s22 - s12 * s12;
    if !(det > 1e-12 * s11 * s22) {
        return Err(Error::Fit("design matrix is rank deficient".into()));
    }
    let k1 = (s22 * t1 - s12 * t2) / det;
    let k2 = (s11 * t2 - s12 * t1) / det;

    let count = measurements.len() as f64;
    let mean = measurements.iter().map(|m| m.saved_fraction).sum::<f64>() / count;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for m in measurements {
        let [a, b] = basis(m.n, m.beta);
        ss_res += (m.saved_fraction - k1 * a - k2 * b).powi(2);
        ss_tot += (m.saved_fraction - mean).powi(2);
    }
    let r_squared = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(TimingModel {
        k1,
        k2,
        r_squared,
        mean_units_per_layer: 1.0,
        measurements: measurements.to_vec(),
    })
}
