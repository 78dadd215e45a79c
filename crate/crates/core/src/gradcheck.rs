//! Central-difference gradients, used as the oracle for the tape.

use crate::error::{Error, Result};
use crate::model::{GradSet, ParamSet};
use crate::tensor::Tensor;

/// `(f(θ + h e_k) - f(θ - h e_k)) / 2h` for every scalar coordinate `k`.
pub fn finite_diff_gradient<F>(f: F, params: &ParamSet, h: f64) -> Result<GradSet>
where
    F: Fn(&ParamSet) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Contract(format!("step h must be positive, got {h}")));
    }
    let mut work = params.clone();
    let mut units = Vec::with_capacity(params.num_units());
    for u in 0..params.num_units() {
        let shape = params.units()[u].tensor.shape().to_vec();
        let mut grad = Vec::with_capacity(params.units()[u].tensor.len());
        for k in 0..params.units()[u].tensor.len() {
            let original = params.units()[u].tensor.data()[k];
            set(&mut work, u, k, original + h);
            let plus = f(&work)?;
            set(&mut work, u, k, original - h);
            let minus = f(&work)?;
            set(&mut work, u, k, original);
            grad.push((plus - minus) / (2.0 * h));
        }
        units.push(Tensor::new(shape, grad)?);
    }
    Ok(GradSet { units })
}

fn set(params: &mut ParamSet, unit: usize, k: usize, value: f64) {
    params.unit_tensor_mut(unit).data_mut()[k] = value;
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: &GradSet, b: &GradSet) -> f64 {
    let diff: f64 = a
        .flatten()
        .iter()
        .zip(b.flatten())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
