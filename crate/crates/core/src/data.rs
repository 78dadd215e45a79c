//! Desk-scale datasets, IDX ingestion and deterministic mini-batching.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Features `[n, d]`, one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

/// A materialized mini-batch together with the dataset rows it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The sub-batch made of the given batch-local rows.
    pub fn subset(&self, rows: &[usize]) -> Result<Batch> {
        Ok(Batch {
            indices: rows.iter().map(|&r| self.indices[r]).collect(),
            features: self.features.select_rows(rows)?,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        })
    }
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "features {:?} for {} labels",
                features.shape(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Index(format!("label {bad} not in [0, {num_classes})")));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Materializes the listed rows as a batch. Indices must be unique.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::Contract("batch size must be >= 1".into()));
        }
        let mut seen = vec![false; self.len()];
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Index(format!("sample {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Contract(format!("sample {i} repeated in batch")));
            }
        }
        Ok(Batch {
            indices: indices.to_vec(),
            features: self.features.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    /// The whole dataset as one batch, in storage order.
    pub fn full_batch(&self) -> Batch {
        Batch {
            indices: (0..self.len()).collect(),
            features: self.features.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Rescales every feature column to mean 0 and standard deviation 1 and
    /// returns the statistics used. Constant columns are only centered.
    pub fn standardize(&mut self) -> Standardization {
        let (n, d) = (self.len(), self.dim());
        let data = self.features.data();
        let mut stats = Standardization {
            mean: Vec::with_capacity(d),
            scale: Vec::with_capacity(d),
        };
        for j in 0..d {
            let mean = (0..n).map(|i| data[i * d + j]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (data[i * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            stats.mean.push(mean);
            stats.scale.push(if std > 0.0 { 1.0 / std } else { 1.0 });
        }
        stats.apply(self).expect("statistics computed from this dataset");
        stats
    }

    /// Seeded shuffle into a training part and a held-out part of
    /// `round(n * test_fraction)` samples.
    pub fn train_test_split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::config("test_fraction", "must lie in [0, 1)"));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (self.len() as f64 * test_fraction).round() as usize;
        if n_test >= self.len() || (test_fraction > 0.0 && n_test == 0) {
            return Err(Error::config(
                "test_fraction",
                format!("leaves an empty split of {} samples", self.len()),
            ));
        }
        let (test_idx, train_idx) = order.split_at(n_test);
        let pick = |idx: &[usize]| -> Result<Dataset> {
            let b = self.batch(idx)?;
            Dataset::new(b.features, b.labels, self.num_classes)
        };
        let test = if n_test == 0 {
            self.clone()
        } else {
            pick(test_idx)?
        };
        Ok((pick(train_idx)?, test))
    }
}

/// Per-column affine map `x -> (x - mean) * scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn apply(&self, dataset: &mut Dataset) -> Result<()> {
        let d = dataset.dim();
        if self.mean.len() != d {
            return Err(Error::Dimension(format!(
                "statistics for {} columns, dataset has {d}",
                self.mean.len()
            )));
        }
        for row in dataset.features.data_mut().chunks_mut(d) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *x = (*x - m) * s;
            }
        }
        Ok(())
    }
}

/// `classes` isotropic Gaussian clusters in `d` dimensions with `spread` standard
/// deviation. Centers are drawn uniformly from `[-4, 4]^d` by the seeded generator;
/// labels cycle `0, 1, ..., C-1` so classes stay balanced.
pub fn make_blobs(n: usize, d: usize, classes: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(Error::config("n", "need at least one sample per class"));
    }
    if d == 0 {
        return Err(Error::config("d", "must be >= 1"));
    }
    if !(spread >= 0.0) {
        return Err(Error::config("spread", "must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..d).map(|_| rng.random_range(-4.0..4.0)).collect())
        .collect();
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for &center in &centers[c] {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features.push(center + spread * noise);
        }
        labels.push(c);
    }
    Dataset::new(Tensor::new(vec![n, d], features)?, labels, classes)
}

/// Two interleaving half circles of radius one (classes 0 and 1), with
/// Gaussian `noise` added to both coordinates. The outer moon is centered at
/// the origin, the inner one at `(1, 0.5)`. Samples are emitted in a seeded
/// random order.
pub fn make_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::config("n", "need at least two samples"));
    }
    if !(noise >= 0.0) {
        return Err(Error::config("noise", "must be non-negative"));
    }
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let arc = |count: usize, k: usize| {
        if count == 1 {
            0.0
        } else {
            PI * k as f64 / (count - 1) as f64
        }
    };
    let mut points: Vec<([f64; 2], usize)> = Vec::with_capacity(n);
    for k in 0..n_outer {
        let t = arc(n_outer, k);
        points.push(([t.cos(), t.sin()], 0));
    }
    for k in 0..n_inner {
        let t = arc(n_inner, k);
        points.push(([1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    points.shuffle(&mut rng);
    let mut features = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for (p, y) in points {
        for v in p {
            let e: f64 = StandardNormal.sample(&mut rng);
            features.push(v + noise * e);
        }
        labels.push(y);
    }
    Dataset::new(Tensor::new(vec![n, 2], features)?, labels, 2)
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

/// Parses an IDX image file (`0x00000803`, dims `n, rows, cols`) and label file
/// (`0x00000801`). Pixels are scaled to `[0, 1]`; labels above 9 widen the
/// class count.
pub fn parse_idx(images: &[u8], labels: &[u8], limit: usize) -> Result<Dataset> {
    if limit == 0 {
        return Err(Error::EmptyDataset);
    }
    let magic = read_u32(images, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("bad image magic {magic:#010x}")));
    }
    let magic = read_u32(labels, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("bad label magic {magic:#010x}")));
    }
    let n_images = read_u32(images, 4)? as usize;
    let rows = read_u32(images, 8)? as usize;
    let cols = read_u32(images, 12)? as usize;
    let n_labels = read_u32(labels, 4)? as usize;
    if n_images != n_labels {
        return Err(Error::Format(format!(
            "{n_images} images but {n_labels} labels"
        )));
    }
    let n = limit.min(n_images);
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let pixels = rows * cols;
    let image_bytes = images
        .get(16..16 + n * pixels)
        .ok_or_else(|| Error::Format("truncated image data".into()))?;
    let label_bytes = labels
        .get(8..8 + n)
        .ok_or_else(|| Error::Format("truncated label data".into()))?;
    let features: Vec<f64> = image_bytes.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&y| usize::from(y)).collect();
    let classes = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    Dataset::new(Tensor::new(vec![n, pixels], features)?, labels, classes)
}

/// Reads the first `limit` samples of an IDX image/label file pair.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: usize) -> Result<Dataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    parse_idx(&images, &labels, limit)
}

/// Encodes raw pixels and labels as an IDX image/label pair.
pub fn encode_idx(pixels: &[u8], rows: usize, cols: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let n = labels.len();
    assert_eq!(pixels.len(), n * rows * cols, "pixel count mismatch");
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + n);
    for v in [IDX_LABELS_MAGIC, n as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    (img, lab)
}

/// Shuffled index order for one epoch, seeded by `(seed, epoch)`.
pub fn epoch_order(n: usize, epoch: u64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Mini-batches of size `b` for one epoch: a Fisher-Yates shuffle seeded by
/// `(seed, epoch)`, cut into `floor(n / b)` batches; the remainder is dropped.
pub fn batch_iter(
    dataset: &Dataset,
    b: usize,
    epoch: u64,
    seed: u64,
) -> Result<impl Iterator<Item = Batch> + '_> {
    if b == 0 || b > dataset.len() {
        return Err(Error::config(
            "batch_size",
            format!("must lie in [1, {}]", dataset.len()),
        ));
    }
    let order = epoch_order(dataset.len(), epoch, seed);
    let count = dataset.len() / b;
    Ok((0..count).map(move |k| {
        dataset
            .batch(&order[k * b..(k + 1) * b])
            .expect("shuffled indices are unique and in range")
    }))
}
