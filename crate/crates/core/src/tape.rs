//! Tape-based reverse-mode automatic differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and a backward sweep is a single reverse pass.
//! Parameter leaves carry a layer depth (1 = closest to the input); a
//! [`GradRequest`] can stop the sweep below a depth or skip individual
//! units, and any node whose gradient no requested leaf depends on is never
//! visited. That is how skipped backpropagation is realized.
//!
//! A cross-entropy loss node may be restricted to a subset of sample rows;
//! the row-wise ops (affine, ReLU) then only touch those rows on the way
//! back, so backward cost scales with the subset size.

use crate::error::{Error, Result};
use crate::tensor::{
    affine_forward, cross_entropy_per_sample, mean_over, relu_forward, softmax_row, Tensor,
};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param {
        unit: usize,
        depth: usize,
    },
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Relu {
        x: NodeId,
    },
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        rows: Option<Vec<usize>>,
        per_sample: Vec<f64>,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Square {
        x: NodeId,
    },
    Sum {
        x: NodeId,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Which parameter gradients a backward sweep should produce.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradRequest {
    /// Only units at depth `>= stop_depth` receive gradients; `None` or `0`
    /// means every depth.
    pub stop_depth: Option<usize>,
    /// Per-unit selection in registration order; `None` selects all units.
    pub units: Option<Vec<bool>>,
}

impl GradRequest {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn stop_at(depth: usize) -> Self {
        Self {
            stop_depth: Some(depth),
            units: None,
        }
    }

    pub fn units(selected: Vec<bool>) -> Self {
        Self {
            stop_depth: None,
            units: Some(selected),
        }
    }
}

/// An append-only record of primitive operations.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Number of registered parameter leaves.
    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Records a constant input.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Records a differentiable parameter unit at layer `depth` (1-based).
    /// Units are numbered in registration order.
    pub fn param(&mut self, value: Tensor, depth: usize) -> NodeId {
        let unit = self.params.len();
        let id = self.push(Op::Param { unit, depth }, value);
        self.params.push(id);
        id
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let out = affine_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(Op::Affine { x, w, b }, out))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = relu_forward(self.value(x));
        self.push(Op::Relu { x }, out)
    }

    /// Mean softmax cross-entropy over `rows` (every row when `None`).
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        rows: Option<&[usize]>,
    ) -> Result<NodeId> {
        let per_sample = cross_entropy_per_sample(self.value(logits), labels)?;
        if let Some(rows) = rows {
            if rows.is_empty() {
                return Err(Error::Contract("loss over an empty row subset".into()));
            }
            if let Some(&bad) = rows.iter().find(|&&r| r >= per_sample.len()) {
                return Err(Error::Index(format!(
                    "row {bad} out of range for batch of {}",
                    per_sample.len()
                )));
            }
        }
        let mean = mean_over(&per_sample, rows);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                rows: rows.map(<[usize]>::to_vec),
                per_sample,
            },
            Tensor::scalar(mean),
        ))
    }

    /// Per-sample losses recorded by a cross-entropy node.
    pub fn per_sample(&self, id: NodeId) -> Option<&[f64]> {
        match &self.nodes[id.0].op {
            Op::CrossEntropy { per_sample, .. } => Some(per_sample),
            _ => None,
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same(a, b)?;
        let out = self.value(a).add_scaled(self.value(b), 1.0);
        Ok(self.push(Op::Add { a, b }, out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same(a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        Ok(self.push(Op::Mul { a, b }, out))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let out = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|t| t * t).collect());
        self.push(Op::Square { x }, out)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).data().iter().sum();
        self.push(Op::Sum { x }, Tensor::scalar(total))
    }

    fn check_same(&self, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).same_shape(self.value(b)) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "elementwise op on shapes {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )))
        }
    }

    /// Marks the nodes whose gradient is required to reach a requested leaf.
    fn needs_grad(&self, upto: usize, request: &GradRequest) -> Result<Vec<bool>> {
        if let Some(units) = &request.units {
            if units.len() != self.params.len() {
                return Err(Error::Contract(format!(
                    "unit selection has {} entries for {} parameter units",
                    units.len(),
                    self.params.len()
                )));
            }
        }
        let stop = request.stop_depth.unwrap_or(0);
        let mut needs = vec![false; upto + 1];
        for (i, node) in self.nodes[..=upto].iter().enumerate() {
            needs[i] = match &node.op {
                Op::Input => false,
                Op::Param { unit, depth } => {
                    *depth >= stop && request.units.as_ref().is_none_or(|u| u[*unit])
                }
                Op::Affine { x, w, b } => needs[x.0] || needs[w.0] || needs[b.0],
                Op::Relu { x } | Op::Square { x } | Op::Sum { x } => needs[x.0],
                Op::CrossEntropy { logits, .. } => needs[logits.0],
                Op::Add { a, b } | Op::Mul { a, b } => needs[a.0] || needs[b.0],
            };
        }
        Ok(needs)
    }

    /// Reverse sweep from the scalar node `loss`.
    ///
    /// Returns one gradient per parameter unit in registration order. Units
    /// excluded by `request` get an all-zero gradient.
    pub fn backward(&self, loss: NodeId, request: &GradRequest) -> Result<Vec<Tensor>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let needs = self.needs_grad(loss.0, request)?;
        let active_rows: Option<&[usize]> = match &self.nodes[loss.0].op {
            Op::CrossEntropy { rows, .. } => rows.as_deref(),
            _ => None,
        };

        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        let mut out: Vec<Option<Tensor>> = vec![None; self.params.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if !needs[id] {
                continue;
            }
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            match &self.nodes[id].op {
                Op::Input => {}
                Op::Param { unit, .. } => out[*unit] = Some(upstream),
                Op::Affine { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    if needs[w.0] {
                        let dw = affine_grad_weight(xv, &upstream, active_rows);
                        accumulate(&mut grads[w.0], dw);
                    }
                    if needs[b.0] {
                        let db = affine_grad_bias(&upstream, active_rows);
                        accumulate(&mut grads[b.0], db);
                    }
                    if needs[x.0] {
                        let dx = affine_grad_input(wv, &upstream, active_rows);
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::Relu { x } => {
                    let dx = relu_grad(self.value(*x), &upstream, active_rows);
                    accumulate(&mut grads[x.0], dx);
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    rows,
                    ..
                } => {
                    let dz = cross_entropy_grad(
                        self.value(*logits),
                        labels,
                        rows.as_deref(),
                        upstream.data()[0],
                    );
                    accumulate(&mut grads[logits.0], dz);
                }
                Op::Add { a, b } => {
                    if needs[a.0] {
                        accumulate(&mut grads[a.0], upstream.clone());
                    }
                    if needs[b.0] {
                        accumulate(&mut grads[b.0], upstream);
                    }
                }
                Op::Mul { a, b } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if needs[a.0] {
                        accumulate(&mut grads[a.0], elementwise(&upstream, vb, |g, y| g * y));
                    }
                    if needs[b.0] {
                        accumulate(&mut grads[b.0], elementwise(&upstream, va, |g, y| g * y));
                    }
                }
                Op::Square { x } => {
                    let vx = self.value(*x);
                    accumulate(&mut grads[x.0], elementwise(&upstream, vx, |g, y| 2.0 * y * g));
                }
                Op::Sum { x } => {
                    let g = upstream.data()[0];
                    let vx = self.value(*x);
                    accumulate(
                        &mut grads[x.0],
                        Tensor::from_parts(vx.shape().to_vec(), vec![g; vx.len()]),
                    );
                }
            }
        }

        Ok(self
            .params
            .iter()
            .zip(out)
            .map(|(id, g)| g.unwrap_or_else(|| Tensor::zeros(self.value(*id).shape())))
            .collect())
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn elementwise(g: &Tensor, v: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        v.shape().to_vec(),
        g.data().iter().zip(v.data()).map(|(&a, &b)| f(a, b)).collect(),
    )
}

fn for_rows(n: usize, rows: Option<&[usize]>, mut f: impl FnMut(usize)) {
    match rows {
        Some(rows) => rows.iter().for_each(|&i| f(i)),
        None => (0..n).for_each(f),
    }
}

fn affine_grad_weight(x: &Tensor, dy: &Tensor, rows: Option<&[usize]>) -> Tensor {
    let (d_in, d_out) = (x.cols(), dy.cols());
    let (xd, gd) = (x.data(), dy.data());
    let mut dw = vec![0.0; d_in * d_out];
    for_rows(x.rows(), rows, |i| {
        let grow = &gd[i * d_out..(i + 1) * d_out];
        for k in 0..d_in {
            let a = xd[i * d_in + k];
            if a == 0.0 {
                continue;
            }
            for (w, &g) in dw[k * d_out..(k + 1) * d_out].iter_mut().zip(grow) {
                *w += a * g;
            }
        }
    });
    Tensor::from_parts(vec![d_in, d_out], dw)
}

fn affine_grad_bias(dy: &Tensor, rows: Option<&[usize]>) -> Tensor {
    let d_out = dy.cols();
    let mut db = vec![0.0; d_out];
    for_rows(dy.rows(), rows, |i| {
        for (b, &g) in db.iter_mut().zip(dy.row(i)) {
            *b += g;
        }
    });
    Tensor::from_parts(vec![d_out], db)
}

fn affine_grad_input(w: &Tensor, dy: &Tensor, rows: Option<&[usize]>) -> Tensor {
    let (d_in, d_out) = (w.rows(), w.cols());
    let b = dy.rows();
    let wd = w.data();
    let mut dx = vec![0.0; b * d_in];
    for_rows(b, rows, |i| {
        let grow = dy.row(i);
        for k in 0..d_in {
            let wrow = &wd[k * d_out..(k + 1) * d_out];
            dx[i * d_in + k] = wrow.iter().zip(grow).map(|(w, g)| w * g).sum();
        }
    });
    Tensor::from_parts(vec![b, d_in], dx)
}

fn relu_grad(x: &Tensor, dy: &Tensor, rows: Option<&[usize]>) -> Tensor {
    let c = x.cols();
    let mut dx = vec![0.0; x.len()];
    let (xd, gd) = (x.data(), dy.data());
    for_rows(x.rows(), rows, |i| {
        for j in i * c..(i + 1) * c {
            if xd[j] > 0.0 {
                dx[j] = gd[j];
            }
        }
    });
    Tensor::from_parts(x.shape().to_vec(), dx)
}

fn cross_entropy_grad(logits: &Tensor, labels: &[usize], rows: Option<&[usize]>, scale: f64) -> Tensor {
    let (b, c) = (logits.rows(), logits.cols());
    let count = rows.map_or(b, <[usize]>::len) as f64;
    let mut dz = vec![0.0; b * c];
    for_rows(b, rows, |i| {
        let out = &mut dz[i * c..(i + 1) * c];
        softmax_row(logits.row(i), out);
        out[labels[i]] -= 1.0;
        for v in out.iter_mut() {
            *v *= scale / count;
        }
    });
    Tensor::from_parts(vec![b, c], dz)
}
