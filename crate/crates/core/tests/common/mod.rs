#![allow(dead_code)]

use esam::model::{ForwardPass, GradSet, Objective, ParamSet, ParamUnit};
use esam::tape::GradRequest;
use esam::tensor::Tensor;
use esam::Result;

/// Single-sample loss `Σ θ²` over every parameter scalar.
pub struct Quadratic;

pub struct QuadraticPass {
    point: Vec<Tensor>,
    per_sample: Vec<f64>,
}

impl Objective for Quadratic {
    type Pass<'a> = QuadraticPass;

    fn forward(&self, params: &ParamSet) -> Result<QuadraticPass> {
        let point: Vec<Tensor> = params.tensors().cloned().collect();
        let value = point.iter().map(Tensor::norm_sq).sum();
        Ok(QuadraticPass {
            point,
            per_sample: vec![value],
        })
    }

    fn num_samples(&self) -> usize {
        1
    }
}

impl ForwardPass for QuadraticPass {
    fn per_sample(&self) -> &[f64] {
        &self.per_sample
    }

    fn backward(&mut self, _rows: Option<&[usize]>, _request: &GradRequest) -> Result<GradSet> {
        Ok(GradSet {
            units: self.point.iter().map(|t| t.scale(2.0)).collect(),
        })
    }
}

pub fn scalar_params(values: &[f64]) -> ParamSet {
    ParamSet::from_units(
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| ParamUnit {
                name: format!("p{i}"),
                tensor: Tensor::vector(&[v]).unwrap(),
            })
            .collect(),
    )
}

pub fn values(params: &ParamSet) -> Vec<f64> {
    params.flatten()
}
