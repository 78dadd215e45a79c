//! Two-dimensional loss surfaces around a parameter point.
//!
//! Gaussian mode draws two random directions, orthogonalizes the second
//! against the first and rescales every unit of each direction to the norm
//! of the matching parameter unit ("filter normalization"). Adversarial mode
//! uses `η ∇L` on the two halves of a random batch split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{batch_loss, loss_and_grad, ParamSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandscapeMode {
    Gaussian,
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeOptions {
    pub mode: LandscapeMode,
    pub grid_size: usize,
    pub extent: f64,
    pub groups: usize,
    pub seed: u64,
    /// Step size scaling the adversarial directions.
    pub eta: f64,
    /// Batch drawn for the adversarial directions.
    pub batch_size: usize,
}

impl Default for LandscapeOptions {
    fn default() -> Self {
        Self {
            mode: LandscapeMode::Gaussian,
            grid_size: 25,
            extent: 1.0,
            groups: 10,
            seed: 0,
            eta: 0.05,
            batch_size: 128,
        }
    }
}

/// Loss over a `G x G` grid; `losses[i][j]` is at `(axis[i], axis[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub mode: LandscapeMode,
    pub axis: Vec<f64>,
    pub losses: Vec<Vec<f64>>,
    pub groups: usize,
    pub center_loss: f64,
    /// How directions were scaled; recorded because it is a free choice.
    pub direction_scaling: String,
}

impl LandscapeGrid {
    pub fn max_loss(&self) -> f64 {
        self.losses
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Value at the grid origin (odd grid sizes only).
    pub fn center(&self) -> Option<f64> {
        let g = self.axis.len();
        (g % 2 == 1).then(|| self.losses[g / 2][g / 2])
    }
}

/// `G` evenly spaced points on `[-extent, extent]`; the middle one of an odd
/// grid is exactly zero.
pub fn grid_axis(grid_size: usize, extent: f64) -> Vec<f64> {
    let last = (grid_size - 1) as f64;
    (0..grid_size)
        .map(|i| extent * (2.0 * i as f64 / last - 1.0))
        .collect()
}

fn flat_dot(a: &[Tensor], b: &[Tensor]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// `d2 ← d2 − (d2·d1 / d1·d1) d1`.
fn orthogonalize(d1: &[Tensor], d2: &[Tensor]) -> Vec<Tensor> {
    let denom = flat_dot(d1, d1);
    if denom == 0.0 {
        return d2.to_vec();
    }
    let c = flat_dot(d2, d1) / denom;
    d2.iter().zip(d1).map(|(b, a)| b.add_scaled(a, -c)).collect()
}

fn filter_normalize(params: &ParamSet, dir: &[Tensor]) -> Vec<Tensor> {
    params
        .tensors()
        .zip(dir)
        .map(|(p, d)| {
            let dn = d.norm_sq().sqrt();
            if dn == 0.0 {
                Tensor::zeros(d.shape())
            } else {
                d.scale(p.norm_sq().sqrt() / dn)
            }
        })
        .collect()
}

/// Two orthogonalized, filter-normalized Gaussian directions.
pub fn gaussian_directions(params: &ParamSet, rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Vec<Tensor>) {
    let mut draw = || -> Vec<Tensor> {
        params
            .tensors()
            .map(|t| {
                let data = (0..t.len()).map(|_| StandardNormal.sample(&mut *rng)).collect();
                Tensor::from_parts(t.shape().to_vec(), data)
            })
            .collect()
    };
    let d1 = draw();
    let d2 = orthogonalize(&d1, &draw());
    (filter_normalize(params, &d1), filter_normalize(params, &d2))
}

/// `η ∇L_{B_x}` and `η ∇L_{B_y}` for a random half/half split of a batch
/// drawn from `dataset`; the second is orthogonalized against the first.
pub fn adversarial_directions(
    params: &ParamSet,
    dataset: &Dataset,
    batch_size: usize,
    eta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let b = batch_size.min(dataset.len());
    if b < 2 {
        return Err(Error::Contract("adversarial directions need >= 2 samples".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);
    let (bx, by) = order[..b].split_at(b / 2);
    let gx = loss_and_grad(&dataset.batch(bx)?, params)?.1;
    let gy = loss_and_grad(&dataset.batch(by)?, params)?.1;
    let d1: Vec<Tensor> = gx.units.iter().map(|g| g.scale(eta)).collect();
    let d2: Vec<Tensor> = gy.units.iter().map(|g| g.scale(eta)).collect();
    let d2 = orthogonalize(&d1, &d2);
    Ok((d1, d2))
}

/// `loss(θ + x d1 + y d2)` for every `(x, y)` in `axis × axis`.
pub fn evaluate_plane<F>(
    params: &ParamSet,
    d1: &[Tensor],
    d2: &[Tensor],
    axis: &[f64],
    loss: F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&ParamSet) -> Result<f64>,
{
    axis.iter()
        .map(|&x| {
            let shifted = params.offset(d1, x)?;
            axis.iter()
                .map(|&y| loss(&shifted.offset(d2, y)?))
                .collect()
        })
        .collect()
}

/// Loss landscape of `params` on `dataset`, averaged over `groups` draws of
/// directions.
pub fn landscape(params: &ParamSet, dataset: &Dataset, opts: &LandscapeOptions) -> Result<LandscapeGrid> {
    if opts.grid_size < 2 {
        return Err(Error::config("grid_size", "must be >= 2"));
    }
    if opts.groups == 0 {
        return Err(Error::config("groups", "must be >= 1"));
    }
    if !(opts.extent > 0.0) {
        return Err(Error::config("extent", "must be > 0"));
    }
    let full = dataset.full_batch();
    let loss = |p: &ParamSet| batch_loss(p, &full);
    let center_loss = loss(params)?;
    let axis = grid_axis(opts.grid_size, opts.extent);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut grids = Vec::with_capacity(opts.groups);
    for _ in 0..opts.groups {
        let (d1, d2) = match opts.mode {
            LandscapeMode::Gaussian => gaussian_directions(params, &mut rng),
            LandscapeMode::Adversarial => {
                adversarial_directions(params, dataset, opts.batch_size, opts.eta, &mut rng)?
            }
        };
        grids.push(evaluate_plane(params, &d1, &d2, &axis, loss)?);
    }

    // Shifted mean: identical group values average to themselves exactly.
    let g = opts.grid_size;
    let n = grids.len() as f64;
    let losses = (0..g)
        .map(|i| {
            (0..g)
                .map(|j| {
                    let base = grids[0][i][j];
                    base + grids[1..].iter().map(|m| m[i][j] - base).sum::<f64>() / n
                })
                .collect()
        })
        .collect();

    let direction_scaling = match opts.mode {
        LandscapeMode::Gaussian => "filter-normalized gaussian",
        LandscapeMode::Adversarial => "eta-scaled subset gradients",
    };
    Ok(LandscapeGrid {
        mode: opts.mode,
        axis,
        losses,
        groups: opts.groups,
        center_loss,
        direction_scaling: direction_scaling.to_string(),
    })
}
