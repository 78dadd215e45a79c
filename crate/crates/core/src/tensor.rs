//! Dense row-major `f64` tensors and the forward kernels used by the MLP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense, row-major tensor of 64-bit floats.
///
/// Every dimension is positive and `data.len()` equals the product of the
/// shape. A rank-0 tensor (empty shape) holds exactly one value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking the length and that every entry is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "shape {shape:?} has a zero dimension"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite entry {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for kernel outputs whose length is known correct.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a `rows x cols` matrix from nested rows.
    pub fn matrix(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged matrix rows".into()));
        }
        Self::new(vec![r, c], rows.concat())
    }

    pub fn vector(values: &[f64]) -> Result<Self> {
        Self::new(vec![values.len()], values.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Number of rows of a matrix (first dimension).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Number of columns of a matrix (product of the trailing dimensions).
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Copies the listed rows into a new matrix, preserving their order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Contract("cannot select zero rows".into()));
        }
        let c = self.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= self.rows() {
                return Err(Error::Index(format!(
                    "row {r} out of range for {} rows",
                    self.rows()
                )));
            }
            data.extend_from_slice(self.row(r));
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Ok(Self::from_parts(shape, data))
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        Self::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| v * factor).collect(),
        )
    }

    /// `self + factor * other`, elementwise.
    pub fn add_scaled(&self, other: &Tensor, factor: f64) -> Tensor {
        debug_assert!(self.same_shape(other));
        Self::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + factor * b)
                .collect(),
        )
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Dense layer `x W + bias` for `x: [b, d_in]`, `W: [d_in, d_out]`, `bias: [d_out]`.
pub fn affine_forward(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2 || w.shape().len() != 2 || bias.shape().len() != 1 {
        return Err(Error::Dimension(format!(
            "affine expects x[b,d_in], W[d_in,d_out], bias[d_out]; got {:?}, {:?}, {:?}",
            x.shape(),
            w.shape(),
            bias.shape()
        )));
    }
    let (b, d_in) = (x.shape()[0], x.shape()[1]);
    let (w_in, d_out) = (w.shape()[0], w.shape()[1]);
    if d_in != w_in || bias.shape()[0] != d_out {
        return Err(Error::Dimension(format!(
            "affine shapes do not conform: x {:?}, W {:?}, bias {:?}",
            x.shape(),
            w.shape(),
            bias.shape()
        )));
    }
    let xd = x.data();
    let wd = w.data();
    let bd = bias.data();
    let mut out = vec![0.0; b * d_out];
    for i in 0..b {
        let row = &mut out[i * d_out..(i + 1) * d_out];
        for k in 0..d_in {
            let a = xd[i * d_in + k];
            let wrow = &wd[k * d_out..(k + 1) * d_out];
            for (o, &wv) in row.iter_mut().zip(wrow) {
                *o += a * wv;
            }
        }
        for (o, &bv) in row.iter_mut().zip(bd) {
            *o += bv;
        }
    }
    Ok(Tensor::from_parts(vec![b, d_out], out))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    Tensor::from_parts(
        x.shape().to_vec(),
        x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
    )
}

/// `logsumexp(row) - row[y]`, written as `(m - row[y]) + ln1p(Σ_{j≠k} e^{z_j - m})`
/// with `k` the first arg-max so a confident correct row keeps full precision.
fn cross_entropy_row(row: &[f64], y: usize) -> f64 {
    let (k, m) = row
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (j, z)| if z > best.1 { (j, z) } else { best });
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, &z)| (z - m).exp())
        .sum();
    (m - row[y]) + rest.ln_1p()
}

/// Per-sample cross-entropy of `logits[b, C]` against class indices, and their mean.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(Vec<f64>, f64)> {
    let per_sample = cross_entropy_per_sample(logits, labels)?;
    let mean = mean_over(&per_sample, None);
    Ok((per_sample, mean))
}

pub(crate) fn cross_entropy_per_sample(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    if logits.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "logits must be a matrix, got shape {:?}",
            logits.shape()
        )));
    }
    let (b, c) = (logits.rows(), logits.cols());
    if labels.len() != b {
        return Err(Error::Dimension(format!(
            "{} labels for {b} rows of logits",
            labels.len()
        )));
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            if y >= c {
                return Err(Error::Index(format!("label {y} not in [0, {c})")));
            }
            let row = logits.row(i);
            Ok(cross_entropy_row(row, y))
        })
        .collect()
}

/// Softmax probabilities of one row.
pub(crate) fn softmax_row(row: &[f64], out: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &z) in out.iter_mut().zip(row) {
        *o = (z - m).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Mean of `values` over `rows` (all entries when `None`), summed in listed order.
///
/// This is the single definition of a batch or subset loss.
pub fn mean_over(values: &[f64], rows: Option<&[usize]>) -> f64 {
    match rows {
        None => values.iter().sum::<f64>() / values.len() as f64,
        Some(rows) => rows.iter().map(|&i| values[i]).sum::<f64>() / rows.len() as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn new_rejects_bad_length_and_nonfinite() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![1.0; 3]),
            Err(Error::Dimension(_))
        ));
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }

    #[test]
    fn affine_identity_weights() {
        let x = Tensor::matrix(&[&[1.0, 2.0]]).unwrap();
        let w = Tensor::matrix(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let b = Tensor::vector(&[0.0, 0.0]).unwrap();
        assert_eq!(affine_forward(&x, &w, &b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn affine_hand_arithmetic() {
        let x = Tensor::matrix(&[&[1.0, 1.0]]).unwrap();
        let w = Tensor::matrix(&[&[2.0], &[3.0]]).unwrap();
        let b = Tensor::vector(&[1.0]).unwrap();
        let out = affine_forward(&x, &w, &b).unwrap();
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out.data(), &[6.0]);
    }

    #[test]
    fn affine_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (b, d_in, d_out) = (3, 4, 2);
        let x = random_tensor(&mut rng, &[b, d_in]);
        let w = random_tensor(&mut rng, &[d_in, d_out]);
        let bias = random_tensor(&mut rng, &[d_out]);
        let out = affine_forward(&x, &w, &bias).unwrap();
        for i in 0..b {
            for j in 0..d_out {
                let mut s = 0.0;
                for k in 0..d_in {
                    s += x.data()[i * d_in + k] * w.data()[k * d_out + j];
                }
                s += bias.data()[j];
                assert!((out.data()[i * d_out + j] - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn affine_shape_mismatch() {
        let x = Tensor::zeros(&[2, 3]);
        let w = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[2]);
        assert!(matches!(affine_forward(&x, &w, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn relu_cases() {
        let x = Tensor::vector(&[-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::vector(&[-3.0, -0.5, -1e-9]).unwrap();
        assert!(relu_forward(&neg).data().iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_tensor(&mut rng, &[5, 6]);
        let out = relu_forward(&r);
        for (o, v) in out.data().iter().zip(r.data()) {
            assert_eq!(*o, if *v > 0.0 { *v } else { 0.0 });
        }
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let logits = Tensor::matrix(&[&[0.0, 0.0]]).unwrap();
        let (ps, mean) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!((ps[0] - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(mean, ps[0]);

        let logits = Tensor::matrix(&[&[10.0, -10.0]]).unwrap();
        let (ps, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        let expected = (-20.0f64).exp().ln_1p();
        assert!((ps[0] - expected).abs() < 1e-20);
        assert!((ps[0] - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn cross_entropy_matches_precise_oracle() {
        // Reference values computed with 50-digit arithmetic (mpmath).
        let logits = Tensor::matrix(&[
            &[1.25, -0.75, 3.5],
            &[-2.0, 0.125, 0.5],
            &[4.75, 4.5, -3.25],
            &[0.0, -1.5, 2.25],
        ])
        .unwrap();
        let labels = [0, 2, 1, 2];
        let expected = [
            2.363_028_156_644_630_705_842_314,
            0.570_625_968_499_554_199_779_036_1,
            0.826_127_991_304_466_843_036_856_7,
            0.121_258_739_874_893_045_580_355_4,
        ];
        let (ps, _) = softmax_cross_entropy(&logits, &labels).unwrap();
        for (p, e) in ps.iter().zip(expected) {
            assert!((p - e).abs() < 1e-12, "{p} vs {e}");
        }
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let logits = Tensor::zeros(&[1, 3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn cross_entropy_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let logits = random_tensor(&mut rng, &[3, 4]).scale(3.0);
            let shift = rng.random_range(-50.0..50.0);
            let mut shifted = logits.clone();
            for v in &mut shifted.data_mut()[4..8] {
                *v += shift;
            }
            let labels = [1, 3, 0];
            let (a, _) = softmax_cross_entropy(&logits, &labels).unwrap();
            let (b, _) = softmax_cross_entropy(&shifted, &labels).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
