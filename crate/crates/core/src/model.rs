//! Multi-layer perceptron definition, parameter containers and evaluation.
//!
//! A parameter *unit* is one layer tensor: the weight matrix or the bias
//! vector. An MLP with `L` layers therefore has `N = 2L` units, ordered
//! `layer1.weight, layer1.bias, layer2.weight, ...`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::tape::{GradRequest, NodeId, Tape};
use crate::tensor::{affine_forward, cross_entropy_per_sample, mean_over, relu_forward, Tensor};

/// Layer sizes `[d0, d1, ..., dL]`; ReLU on every hidden layer, linear logits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::config(
                "layer_sizes",
                "need at least an input and an output size",
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::config("layer_sizes", "every size must be >= 1"));
        }
        Ok(Self { layer_sizes })
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    /// Unit shapes in canonical order.
    pub fn unit_shapes(&self) -> Vec<Vec<usize>> {
        self.layer_sizes
            .windows(2)
            .flat_map(|w| [vec![w[0], w[1]], vec![w[1]]])
            .collect()
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamUnit {
    pub name: String,
    pub tensor: Tensor,
}

/// The ordered parameter units of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    spec: Option<MlpSpec>,
    units: Vec<ParamUnit>,
}

/// Gradient of a loss with respect to every unit of a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet {
    pub units: Vec<Tensor>,
}

impl ParamSet {
    /// A free-form parameter set not tied to an MLP (used for toy objectives).
    pub fn from_units(units: Vec<ParamUnit>) -> Self {
        Self { spec: None, units }
    }

    pub fn from_mlp(spec: MlpSpec, tensors: Vec<Tensor>) -> Result<Self> {
        let shapes = spec.unit_shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::Dimension(format!(
                "{} tensors for {} units",
                tensors.len(),
                shapes.len()
            )));
        }
        let units = tensors
            .into_iter()
            .zip(&shapes)
            .enumerate()
            .map(|(i, (t, s))| {
                if t.shape() != s.as_slice() {
                    return Err(Error::Dimension(format!(
                        "unit {i} has shape {:?}, expected {s:?}",
                        t.shape()
                    )));
                }
                Ok(ParamUnit {
                    name: unit_name(i),
                    tensor: t,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: Some(spec),
            units,
        })
    }

    pub fn spec(&self) -> Option<&MlpSpec> {
        self.spec.as_ref()
    }

    pub fn units(&self) -> &[ParamUnit] {
        &self.units
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.units.iter().map(|u| &u.tensor)
    }

    pub(crate) fn unit_tensor_mut(&mut self, unit: usize) -> &mut Tensor {
        &mut self.units[unit].tensor
    }

    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    pub fn num_scalars(&self) -> usize {
        self.units.iter().map(|u| u.tensor.len()).sum()
    }

    /// Layer depth (1-based) of unit `i`; free-form sets put every unit at depth 1.
    pub fn depth_of(&self, unit: usize) -> usize {
        if self.spec.is_some() {
            unit / 2 + 1
        } else {
            1
        }
    }

    /// `self + factor * offsets`, unit by unit. Structure must match.
    pub fn offset(&self, offsets: &[Tensor], factor: f64) -> Result<ParamSet> {
        self.check_structure(offsets)?;
        Ok(Self {
            spec: self.spec.clone(),
            units: self
                .units
                .iter()
                .zip(offsets)
                .map(|(u, d)| ParamUnit {
                    name: u.name.clone(),
                    tensor: u.tensor.add_scaled(d, factor),
                })
                .collect(),
        })
    }

    /// Returns a copy with every unit replaced by `f(index, tensor)`.
    pub fn map_units(&self, mut f: impl FnMut(usize, &Tensor) -> Tensor) -> ParamSet {
        Self {
            spec: self.spec.clone(),
            units: self
                .units
                .iter()
                .enumerate()
                .map(|(i, u)| ParamUnit {
                    name: u.name.clone(),
                    tensor: f(i, &u.tensor),
                })
                .collect(),
        }
    }

    pub fn check_structure(&self, tensors: &[Tensor]) -> Result<()> {
        if tensors.len() != self.units.len() {
            return Err(Error::Contract(format!(
                "{} tensors for {} parameter units",
                tensors.len(),
                self.units.len()
            )));
        }
        for (u, t) in self.units.iter().zip(tensors) {
            if !u.tensor.same_shape(t) {
                return Err(Error::Contract(format!(
                    "unit `{}` has shape {:?}, offset has {:?}",
                    u.name,
                    u.tensor.shape(),
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Records the forward pass on `tape`, returning the logits node.
    pub fn record_forward(&self, tape: &mut Tape, features: &Tensor) -> Result<NodeId> {
        let spec = self.require_spec()?;
        check_features(spec, features)?;
        let mut h = tape.input(features.clone());
        let layers = spec.num_layers();
        for layer in 0..layers {
            let w = tape.param(self.units[2 * layer].tensor.clone(), layer + 1);
            let b = tape.param(self.units[2 * layer + 1].tensor.clone(), layer + 1);
            h = tape.affine(h, w, b)?;
            if layer + 1 < layers {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Forward pass without recording; uses the same kernels as the tape.
    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        let spec = self.require_spec()?;
        check_features(spec, features)?;
        let layers = spec.num_layers();
        let mut h = features.clone();
        for layer in 0..layers {
            h = affine_forward(
                &h,
                &self.units[2 * layer].tensor,
                &self.units[2 * layer + 1].tensor,
            )?;
            if layer + 1 < layers {
                h = relu_forward(&h);
            }
        }
        Ok(h)
    }

    fn require_spec(&self) -> Result<&MlpSpec> {
        self.spec
            .as_ref()
            .ok_or_else(|| Error::Contract("parameter set is not an MLP".into()))
    }
}

impl GradSet {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            units: params.tensors().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.units.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &GradSet) -> f64 {
        self.units
            .iter()
            .zip(&other.units)
            .map(|(a, b)| a.dot(b))
            .sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.units
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}

fn unit_name(i: usize) -> String {
    let kind = if i.is_multiple_of(2) { "weight" } else { "bias" };
    format!("layer{}.{kind}", i / 2 + 1)
}

fn check_features(spec: &MlpSpec, features: &Tensor) -> Result<()> {
    if features.shape().len() != 2 || features.cols() != spec.input_dim() {
        return Err(Error::Dimension(format!(
            "features {:?} do not match input dimension {}",
            features.shape(),
            spec.input_dim()
        )));
    }
    Ok(())
}

/// He initialization: weights ~ Normal(0, 2/fan_in), zero biases.
pub fn init_params(spec: &MlpSpec, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = spec
        .layer_sizes
        .windows(2)
        .flat_map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let weights = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
            [
                Tensor::from_parts(vec![fan_in, fan_out], weights),
                Tensor::zeros(&[fan_out]),
            ]
        })
        .collect();
    ParamSet::from_mlp(spec.clone(), tensors).expect("shapes follow the spec")
}

/// Per-sample cross-entropy losses of `params` on `batch`.
pub fn per_sample_losses(params: &ParamSet, batch: &Batch) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let logits = params.logits(&batch.features)?;
    cross_entropy_per_sample(&logits, &batch.labels)
}

/// Batch loss `L_B`: the mean of [`per_sample_losses`].
pub fn batch_loss(params: &ParamSet, batch: &Batch) -> Result<f64> {
    Ok(mean_over(&per_sample_losses(params, batch)?, None))
}

/// Fraction of samples whose arg-max logit equals the label.
pub fn accuracy(params: &ParamSet, features: &Tensor, labels: &[usize]) -> Result<f64> {
    let logits = params.logits(features)?;
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = logits.row(i);
            let best = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                .unwrap_or(0);
            best == y
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// A loss over a fixed batch that can be evaluated and differentiated at any
/// parameter point.
pub trait Objective {
    type Pass<'a>: ForwardPass
    where
        Self: 'a;

    /// Forward pass at `params`, keeping whatever is needed for a later backward.
    fn forward(&self, params: &ParamSet) -> Result<Self::Pass<'_>>;

    /// Number of samples the per-sample losses range over.
    fn num_samples(&self) -> usize;
}

/// The retained state of one forward pass.
pub trait ForwardPass {
    fn per_sample(&self) -> &[f64];

    fn loss(&self) -> f64 {
        mean_over(self.per_sample(), None)
    }

    /// Gradient of the mean loss over `rows` (all samples when `None`).
    fn backward(&mut self, rows: Option<&[usize]>, request: &GradRequest) -> Result<GradSet>;
}

/// Recorded MLP forward pass over a batch.
pub struct MlpPass<'a> {
    tape: Tape,
    logits: NodeId,
    labels: &'a [usize],
    per_sample: Vec<f64>,
}

impl Objective for Batch {
    type Pass<'a> = MlpPass<'a>;

    fn forward(&self, params: &ParamSet) -> Result<MlpPass<'_>> {
        if self.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let mut tape = Tape::new();
        let logits = params.record_forward(&mut tape, &self.features)?;
        let per_sample = cross_entropy_per_sample(tape.value(logits), &self.labels)?;
        Ok(MlpPass {
            tape,
            logits,
            labels: &self.labels,
            per_sample,
        })
    }

    fn num_samples(&self) -> usize {
        self.len()
    }
}

impl ForwardPass for MlpPass<'_> {
    fn per_sample(&self) -> &[f64] {
        &self.per_sample
    }

    fn backward(&mut self, rows: Option<&[usize]>, request: &GradRequest) -> Result<GradSet> {
        let loss = self.tape.cross_entropy(self.logits, self.labels, rows)?;
        let units = self.tape.backward(loss, request)?;
        Ok(GradSet { units })
    }
}

/// Loss and full gradient of `objective` at `params`.
pub fn loss_and_grad<O: Objective>(objective: &O, params: &ParamSet) -> Result<(f64, GradSet)> {
    let mut pass = objective.forward(params)?;
    let grad = pass.backward(None, &GradRequest::full())?;
    Ok((pass.loss(), grad))
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotUnit {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// JSON checkpoint of an MLP: spec, seed and per-unit flat arrays.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub spec: MlpSpec,
    pub seed: u64,
    units: Vec<SnapshotUnit>,
}

impl Snapshot {
    pub fn capture(params: &ParamSet, seed: u64) -> Result<Self> {
        let spec = params.require_spec()?.clone();
        Ok(Self {
            spec,
            seed,
            units: params
                .units
                .iter()
                .map(|u| SnapshotUnit {
                    name: u.name.clone(),
                    shape: u.tensor.shape().to_vec(),
                    data: u.tensor.data().to_vec(),
                })
                .collect(),
        })
    }

    pub fn into_params(self) -> Result<ParamSet> {
        let spec = MlpSpec::new(self.spec.layer_sizes)?;
        let tensors = self
            .units
            .into_iter()
            .map(|u| Tensor::new(u.shape, u.data))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Format(format!("bad snapshot unit: {e}")))?;
        ParamSet::from_mlp(spec, tensors)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("snapshot: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;

    fn batch(features: Vec<f64>, d: usize, labels: Vec<usize>, classes: usize) -> Batch {
        let n = labels.len();
        let ds = Dataset::new(Tensor::new(vec![n, d], features).unwrap(), labels, classes).unwrap();
        ds.batch(&(0..n).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3]).is_err());
        assert!(MlpSpec::new(vec![3, 0, 2]).is_err());
        assert_eq!(MlpSpec::new(vec![2, 3, 2]).unwrap().num_layers(), 2);
    }

    #[test]
    fn init_is_deterministic_and_structured() {
        let spec = MlpSpec::new(vec![2, 3, 2]).unwrap();
        let a = init_params(&spec, 0);
        let b = init_params(&spec, 0);
        assert_eq!(a, b);
        let shapes: Vec<&[usize]> = a.tensors().map(|t| t.shape()).collect();
        assert_eq!(shapes, vec![&[2, 3][..], &[3], &[3, 2], &[2]]);
        assert_eq!(a.num_units(), 4);
        assert_eq!(a.units()[2].name, "layer2.weight");
        assert!(a.units()[1].tensor.data().iter().all(|&v| v == 0.0));
        assert_ne!(a, init_params(&spec, 1));
    }

    #[test]
    fn init_variance_matches_he() {
        let spec = MlpSpec::new(vec![100, 100, 100]).unwrap();
        for seed in [0, 5, 42] {
            let p = init_params(&spec, seed);
            let w = p.units()[0].tensor.data();
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
            assert!((var - 0.02).abs() < 0.2 * 0.02, "variance {var}");
        }
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let spec = MlpSpec::new(vec![2, 3]).unwrap();
        let p = ParamSet::from_mlp(spec, vec![Tensor::zeros(&[2, 3]), Tensor::zeros(&[3])]).unwrap();
        let b = batch(vec![0.3, -1.0], 2, vec![1], 3);
        let l = per_sample_losses(&p, &b).unwrap();
        assert!((l[0] - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn duplicated_sample_gives_equal_losses() {
        let spec = MlpSpec::new(vec![2, 4, 2]).unwrap();
        let p = init_params(&spec, 3);
        let b = batch(vec![0.5, -0.2, 0.5, -0.2], 2, vec![1, 1], 2);
        let l = per_sample_losses(&p, &b).unwrap();
        assert_eq!(l[0], l[1]);
    }

    #[test]
    fn batch_loss_matches_tape_and_manual_mean() {
        let spec = MlpSpec::new(vec![3, 5, 4]).unwrap();
        let p = init_params(&spec, 9);
        let b = batch(
            (0..18).map(|i| (i as f64 * 0.37).sin()).collect(),
            3,
            vec![0, 3, 1, 2, 2, 0],
            4,
        );
        let per = per_sample_losses(&p, &b).unwrap();
        // Oracle: forward through the tape and read its loss node.
        let mut tape = Tape::new();
        let z = p.record_forward(&mut tape, &b.features).unwrap();
        let loss = tape.cross_entropy(z, &b.labels, None).unwrap();
        assert_eq!(tape.value(loss).data()[0], batch_loss(&p, &b).unwrap());
        let manual = per.iter().sum::<f64>() / per.len() as f64;
        assert_eq!(manual, batch_loss(&p, &b).unwrap());
        // No-op perturbation evaluates identically.
        let same = p.offset(&GradSet::zeros_like(&p).units, 1.0).unwrap();
        assert_eq!(per_sample_losses(&same, &b).unwrap(), per);
    }

    #[test]
    fn feature_dimension_mismatch() {
        let spec = MlpSpec::new(vec![3, 2]).unwrap();
        let p = init_params(&spec, 0);
        let b = batch(vec![1.0, 2.0], 2, vec![0], 2);
        assert!(matches!(per_sample_losses(&p, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn snapshot_round_trip_is_exact() {
        let spec = MlpSpec::new(vec![4, 6, 3]).unwrap();
        let p = init_params(&spec, 17);
        let json = Snapshot::capture(&p, 17).unwrap().to_json();
        let back = Snapshot::from_json(&json).unwrap();
        assert_eq!(back.seed, 17);
        assert_eq!(back.into_params().unwrap(), p);
        assert!(Snapshot::from_json("{\"spec\":1}").is_err());
    }
}
