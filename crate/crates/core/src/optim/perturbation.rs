//! The ascent step `ε̂` and its stochastic, masked variant.

use rand::Rng;

use super::config::{check_probability, EpsilonScale, MaskGranularity};
use crate::error::{Error, Result};
use crate::model::{GradSet, ParamSet};
use crate::tensor::Tensor;

/// A weight offset with the same structure as the parameters it perturbs.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub units: Vec<Tensor>,
    pub rho: f64,
}

impl Perturbation {
    pub fn zeros_like(params: &ParamSet, rho: f64) -> Self {
        Self {
            units: params.tensors().map(|t| Tensor::zeros(t.shape())).collect(),
            rho,
        }
    }

    pub fn norm(&self) -> f64 {
        self.units.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.units
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Inner product with a gradient over the flattened parameters.
    pub fn dot(&self, grad: &GradSet) -> f64 {
        self.units.iter().zip(&grad.units).map(|(a, b)| a.dot(b)).sum()
    }

    /// `c · ε`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            units: self.units.iter().map(|t| t.scale(c)).collect(),
            rho: self.rho * c.abs(),
        }
    }
}

/// Bernoulli(β) selection of parameter units (or scalars).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMask {
    pub draws: Vec<bool>,
    pub beta: f64,
    pub granularity: MaskGranularity,
}

impl GradientMask {
    /// Fraction of draws that selected their unit or scalar.
    pub fn density(&self) -> f64 {
        self.draws.iter().filter(|&&d| d).count() as f64 / self.draws.len() as f64
    }

    /// A per-unit mask with explicit draws.
    pub fn per_unit(draws: Vec<bool>, beta: f64) -> Self {
        Self {
            draws,
            beta,
            granularity: MaskGranularity::PerUnit,
        }
    }
}

/// First-order solution of the inner maximization.
pub fn epsilon_hat(grad: &GradSet, rho: f64, mode: EpsilonScale) -> Result<Perturbation> {
    let factor = match mode {
        EpsilonScale::Raw => rho,
        EpsilonScale::Normalized => {
            let norm = grad.norm();
            if norm == 0.0 {
                return Err(Error::DegenerateGradient(
                    "cannot normalize an all-zero gradient".into(),
                ));
            }
            rho / norm
        }
    };
    Ok(Perturbation {
        units: grad.units.iter().map(|g| g.scale(factor)).collect(),
        rho,
    })
}

/// Independent Bernoulli(β) draws, one per unit or per scalar of `params`.
pub fn sample_mask<R: Rng + ?Sized>(
    params: &ParamSet,
    beta: f64,
    granularity: MaskGranularity,
    rng: &mut R,
) -> Result<GradientMask> {
    check_probability("beta", beta)?;
    let count = match granularity {
        MaskGranularity::PerUnit => params.num_units(),
        MaskGranularity::PerScalar => params.num_scalars(),
    };
    let draws = (0..count).map(|_| rng.random_bool(beta)).collect();
    Ok(GradientMask {
        draws,
        beta,
        granularity,
    })
}

/// `a = (m ⊙ ε̂) / β`; unselected coordinates are exactly zero.
pub fn swp_perturbation(eps_hat: &Perturbation, mask: &GradientMask, beta: f64) -> Result<Perturbation> {
    check_probability("beta", beta)?;
    let expected = match mask.granularity {
        MaskGranularity::PerUnit => eps_hat.units.len(),
        MaskGranularity::PerScalar => eps_hat.units.iter().map(Tensor::len).sum(),
    };
    if mask.draws.len() != expected {
        return Err(Error::Contract(format!(
            "mask has {} draws, perturbation needs {expected}",
            mask.draws.len()
        )));
    }
    let mut offset = 0;
    let units = eps_hat
        .units
        .iter()
        .enumerate()
        .map(|(u, t)| {
            let data = t
                .data()
                .iter()
                .enumerate()
                .map(|(k, &e)| {
                    let selected = match mask.granularity {
                        MaskGranularity::PerUnit => mask.draws[u],
                        MaskGranularity::PerScalar => mask.draws[offset + k],
                    };
                    if selected {
                        e / beta
                    } else {
                        0.0
                    }
                })
                .collect();
            offset += t.len();
            Tensor::from_parts(t.shape().to_vec(), data)
        })
        .collect();
    Ok(Perturbation {
        units,
        rho: eps_hat.rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, MlpSpec, ParamUnit};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grad(values: &[&[f64]]) -> GradSet {
        GradSet {
            units: values.iter().map(|v| Tensor::vector(v).unwrap()).collect(),
        }
    }

    #[test]
    fn epsilon_hat_normalized_and_raw() {
        let g = grad(&[&[3.0, 4.0]]);
        let n = epsilon_hat(&g, 0.05, EpsilonScale::Normalized).unwrap();
        assert!((n.units[0].data()[0] - 0.03).abs() < 1e-15);
        assert!((n.units[0].data()[1] - 0.04).abs() < 1e-15);
        let r = epsilon_hat(&g, 0.05, EpsilonScale::Raw).unwrap();
        assert!((r.units[0].data()[0] - 0.15).abs() < 1e-15);
        assert!((r.units[0].data()[1] - 0.20).abs() < 1e-15);
    }

    #[test]
    fn epsilon_hat_norm_equals_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let g = GradSet {
                units: (0..3)
                    .map(|_| {
                        Tensor::vector(&(0..5).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>())
                            .unwrap()
                    })
                    .collect(),
            };
            let rho = rng.random_range(0.01..1.0);
            let e = epsilon_hat(&g, rho, EpsilonScale::Normalized).unwrap();
            assert!((e.norm() - rho).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_is_degenerate() {
        let g = grad(&[&[0.0, 0.0]]);
        assert!(matches!(
            epsilon_hat(&g, 0.1, EpsilonScale::Normalized),
            Err(Error::DegenerateGradient(_))
        ));
        assert!(epsilon_hat(&g, 0.1, EpsilonScale::Raw).is_ok());
    }

    fn params() -> ParamSet {
        init_params(&MlpSpec::new(vec![3, 4, 2]).unwrap(), 0)
    }

    #[test]
    fn full_beta_selects_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for g in [MaskGranularity::PerUnit, MaskGranularity::PerScalar] {
            let m = sample_mask(&params(), 1.0, g, &mut rng).unwrap();
            assert!(m.draws.iter().all(|&d| d));
            assert_eq!(m.density(), 1.0);
        }
        assert_eq!(
            sample_mask(&params(), 1.0, MaskGranularity::PerScalar, &mut rng)
                .unwrap()
                .draws
                .len(),
            3 * 4 + 4 + 4 * 2 + 2
        );
    }

    #[test]
    fn mask_is_seed_deterministic() {
        let a = sample_mask(
            &params(),
            0.5,
            MaskGranularity::PerScalar,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        let b = sample_mask(
            &params(),
            0.5,
            MaskGranularity::PerScalar,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mask_frequency_matches_beta() {
        let p = ParamSet::from_units(vec![ParamUnit {
            name: "w".into(),
            tensor: Tensor::zeros(&[100_000]),
        }]);
        let m = sample_mask(
            &p,
            0.5,
            MaskGranularity::PerScalar,
            &mut ChaCha8Rng::seed_from_u64(12),
        )
        .unwrap();
        assert!((m.density() - 0.5).abs() < 0.005);
    }

    #[test]
    fn invalid_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_mask(&params(), 0.0, MaskGranularity::PerUnit, &mut rng).is_err());
        assert!(sample_mask(&params(), -0.3, MaskGranularity::PerUnit, &mut rng).is_err());
    }

    #[test]
    fn swp_masks_and_rescales() {
        let eps = Perturbation {
            units: vec![Tensor::scalar(0.03), Tensor::scalar(0.04)],
            rho: 0.05,
        };
        let a = swp_perturbation(&eps, &GradientMask::per_unit(vec![true, false], 0.5), 0.5).unwrap();
        assert_eq!(a.units[0].data(), &[0.06]);
        assert_eq!(a.units[1].data(), &[0.0]);

        let id = swp_perturbation(&eps, &GradientMask::per_unit(vec![true, true], 1.0), 1.0).unwrap();
        assert_eq!(id, eps);

        assert!(swp_perturbation(&eps, &GradientMask::per_unit(vec![true], 0.5), 0.5).is_err());
    }

    #[test]
    fn swp_per_scalar_granularity() {
        let eps = Perturbation {
            units: vec![Tensor::vector(&[1.0, 2.0]).unwrap(), Tensor::scalar(3.0)],
            rho: 1.0,
        };
        let mask = GradientMask {
            draws: vec![false, true, true],
            beta: 0.25,
            granularity: MaskGranularity::PerScalar,
        };
        let a = swp_perturbation(&eps, &mask, 0.25).unwrap();
        assert_eq!(a.units[0].data(), &[0.0, 8.0]);
        assert_eq!(a.units[1].data(), &[12.0]);
    }
}
