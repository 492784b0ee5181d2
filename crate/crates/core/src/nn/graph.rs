//! Reverse-mode automatic differentiation over a recorded computation graph.
//!
//! A [`Graph`] records every operation as it is evaluated. Each node keeps its
//! forward value together with whatever the backward rule needs, so a single
//! call to [`Graph::backward`] walks the nodes in reverse creation order and
//! accumulates gradients. Nodes are only ever appended, which makes creation
//! order a valid topological order.
//!
//! Parameters enter the graph through [`Graph::param`] and are identified by
//! the owning store's [`StoreId`] plus their name. Parameters that should stay
//! fixed for a given update are added with [`Graph::constant`] instead, so no
//! gradient can reach them.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{spec_err, Error, Result};
use crate::tensor::{matmul_nt_raw, matmul_raw, matmul_tn_raw, Tensor};

use super::params::StoreId;

/// Probabilities are clipped into `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

static NEXT_GRAPH: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of one particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    idx: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Mask(Var, Vec<f64>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Bce {
        yhat: Var,
        targets: Vec<f64>,
        weights: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<(StoreId, String)>,
}

/// Statistics used by a feature-wise normalization node.
#[derive(Debug, Clone, Copy)]
pub enum NormStats<'a> {
    /// Normalize with the batch's own mean and biased variance.
    Batch { eps: f64 },
    /// Normalize with externally supplied (running) estimates.
    Fixed {
        mean: &'a [f64],
        var: &'a [f64],
        eps: f64,
    },
}

/// Batch mean and unbiased variance observed by a normalization node.
#[derive(Debug, Clone)]
pub struct ObservedStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var {
            graph: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn node(&self, v: Var) -> Result<&Node> {
        if v.graph != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Usage("variable belongs to a different graph".into()));
        }
        Ok(&self.nodes[v.idx])
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.idx].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).expect("foreign variable").value
    }

    /// Value of a scalar node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    /// Input data that no gradient is requested for.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: StoreId, name: &str, value: Tensor) -> Var {
        let v = self.push(value, Op::Param, true);
        self.nodes[v.idx].param = Some((store, name.to_string()));
        v
    }

    /// `(n, k) x (k, m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(spec_err(format!(
                "matmul shape mismatch: {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        let out = Tensor::new(vec![n, m], matmul_raw(av.data(), bv.data(), n, k, m))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Adds a length-`m` bias to every row of an `(n, m)` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (&self.node(x)?.value, &self.node(bias)?.value);
        let m = xv.cols();
        if bv.len() != m {
            return Err(spec_err(format!(
                "bias of length {} cannot broadcast over {m} columns",
                bv.len()
            )));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(m) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.needs(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        if av.shape() != bv.shape() {
            return Err(spec_err(format!(
                "add shape mismatch: {:?} + {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Multiplies by a constant; the constant receives no gradient.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|v| v * c).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::Scale(x, c), rg))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, op, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(x, Op::LeakyRelu(x, slope), |v| if v > 0.0 { v } else { slope * v })
    }

    /// Logistic function, kept strictly inside `(0, 1)`.
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    /// Elementwise product with a fixed mask (used by dropout).
    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let xv = &self.node(x)?.value;
        if mask.len() != xv.len() {
            return Err(spec_err("mask length does not match input"));
        }
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::Mask(x, mask), rg))
    }

    /// Feature-wise normalization followed by a per-feature affine map.
    ///
    /// With [`NormStats::Batch`] the batch mean and unbiased variance are
    /// returned so the caller can update running estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_>,
    ) -> Result<(Var, Option<ObservedStats>)> {
        let xv = &self.node(x)?.value;
        let (n, m) = (xv.rows(), xv.cols());
        let (gv, bv) = (&self.node(gamma)?.value, &self.node(beta)?.value);
        if gv.len() != m || bv.len() != m {
            return Err(spec_err(format!(
                "normalization parameters have length {}/{} for {m} features",
                gv.len(),
                bv.len()
            )));
        }
        let x = x;
        let data = xv.data();
        let (mean, var, eps, batch_stats) = match stats {
            NormStats::Batch { eps } => {
                let mut mean = vec![0.0; m];
                for row in data.chunks(m) {
                    for (acc, v) in mean.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                mean.iter_mut().for_each(|v| *v /= n as f64);
                let mut var = vec![0.0; m];
                for row in data.chunks(m) {
                    for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                        *acc += (v - mu) * (v - mu);
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                (mean, var, eps, true)
            }
            NormStats::Fixed { mean, var, eps } => {
                if mean.len() != m || var.len() != m {
                    return Err(spec_err("running statistics have the wrong length"));
                }
                (mean.to_vec(), var.to_vec(), eps, false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; n * m];
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                let h = (data[i * m + j] - mean[j]) * inv_std[j];
                xhat[i * m + j] = h;
                out[i * m + j] = gv.data()[j] * h + bv.data()[j];
            }
        }
        let observed = batch_stats.then(|| ObservedStats {
            var: if n > 1 {
                var.iter().map(|v| v * n as f64 / (n - 1) as f64).collect()
            } else {
                var.clone()
            },
            mean,
        });
        let out = Tensor::new(vec![n, m], out)?;
        let rg = self.needs(&[x, gamma, beta]);
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        );
        Ok((v, observed))
    }

    /// Mean binary cross-entropy against `{0, 1}` targets.
    pub fn bce(&mut self, yhat: Var, targets: &[f64]) -> Result<Var> {
        self.bce_impl(yhat, targets, None)
    }

    /// Binary cross-entropy with a per-sample weight, averaged over the batch.
    pub fn bce_weighted(&mut self, yhat: Var, targets: &[f64], weights: &[f64]) -> Result<Var> {
        self.bce_impl(yhat, targets, Some(weights))
    }

    fn bce_impl(&mut self, yhat: Var, targets: &[f64], weights: Option<&[f64]>) -> Result<Var> {
        let yv = &self.node(yhat)?.value;
        if yv.len() != targets.len() {
            return Err(spec_err(format!(
                "bce: {} predictions for {} targets",
                yv.len(),
                targets.len()
            )));
        }
        if let Some(t) = targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(spec_err(format!("bce target {t} is not 0 or 1")));
        }
        if let Some(w) = weights {
            if w.len() != targets.len() {
                return Err(spec_err("bce: weight count does not match targets"));
            }
        }
        let n = targets.len() as f64;
        let total: f64 = yv
            .data()
            .iter()
            .zip(targets)
            .enumerate()
            .map(|(i, (&p, &y))| weights.map_or(1.0, |w| w[i]) * bce_term(p, y))
            .sum();
        let rg = self.needs(&[yhat]);
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::Bce {
                yhat,
                targets: targets.to_vec(),
                weights: weights.map(<[f64]>::to_vec),
            },
            rg,
        ))
    }

    /// Back-propagates from a scalar loss. May be called once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::Usage(
                "backward already ran on this graph; build a new forward pass".into(),
            ));
        }
        let root = self.node(loss)?;
        if root.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.idx + 1];
        grads[loss.idx] = Some(vec![1.0]);

        for idx in (0..=loss.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut by_param: BTreeMap<(StoreId, String), Vec<f64>> = BTreeMap::new();
        let mut by_node = BTreeMap::new();
        for (idx, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let node = &self.nodes[idx];
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric {
                    location: format!("gradient of node {idx}"),
                });
            }
            match (&node.op, &node.param) {
                (Op::Param, Some(key)) => match by_param.get_mut(key) {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&g) {
                            *a += v;
                        }
                    }
                    None => {
                        by_param.insert(key.clone(), g);
                    }
                },
                (Op::Leaf, _) if node.requires_grad => {
                    by_node.insert(idx, g);
                }
                _ => {}
            }
        }
        Ok(Gradients {
            graph: self.id,
            by_param,
            by_node,
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.idx].value;
        let wants = |v: Var| self.nodes[v.idx].requires_grad;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if wants(*a) {
                    accumulate(grads, *a, &matmul_nt_raw(g, bv.data(), n, m, k));
                }
                if wants(*b) {
                    accumulate(grads, *b, &matmul_tn_raw(av.data(), g, n, k, m));
                }
            }
            Op::AddBias(x, b) => {
                if wants(*x) {
                    accumulate(grads, *x, g);
                }
                if wants(*b) {
                    let m = val(*b).len();
                    let mut gb = vec![0.0; m];
                    for row in g.chunks(m) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        accumulate(grads, v, g);
                    }
                }
            }
            Op::Scale(x, c) => {
                let gx: Vec<f64> = g.iter().map(|v| v * c).collect();
                accumulate(grads, *x, &gx);
            }
            Op::Relu(x) => {
                let gx: Vec<f64> = val(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                    .collect();
                accumulate(grads, *x, &gx);
            }
            Op::LeakyRelu(x, slope) => {
                let gx: Vec<f64> = val(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &d)| if v > 0.0 { d } else { slope * d })
                    .collect();
                accumulate(grads, *x, &gx);
            }
            Op::Sigmoid(x) => {
                let gx: Vec<f64> = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &d)| d * s * (1.0 - s))
                    .collect();
                accumulate(grads, *x, &gx);
            }
            Op::Mask(x, mask) => {
                let gx: Vec<f64> = g.iter().zip(mask).map(|(d, m)| d * m).collect();
                accumulate(grads, *x, &gx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let gv = val(*gamma).data();
                let m = gv.len();
                let n = g.len() / m;
                if wants(*gamma) {
                    let mut gg = vec![0.0; m];
                    for (i, d) in g.iter().enumerate() {
                        gg[i % m] += d * xhat[i];
                    }
                    accumulate(grads, *gamma, &gg);
                }
                if wants(*beta) {
                    let mut gb = vec![0.0; m];
                    for (i, d) in g.iter().enumerate() {
                        gb[i % m] += d;
                    }
                    accumulate(grads, *beta, &gb);
                }
                if wants(*x) {
                    let dxhat: Vec<f64> = g.iter().enumerate().map(|(i, d)| d * gv[i % m]).collect();
                    let mut gx = vec![0.0; n * m];
                    if *batch_stats {
                        let mut sum = vec![0.0; m];
                        let mut sum_x = vec![0.0; m];
                        for i in 0..n * m {
                            sum[i % m] += dxhat[i];
                            sum_x[i % m] += dxhat[i] * xhat[i];
                        }
                        let nf = n as f64;
                        for i in 0..n * m {
                            let j = i % m;
                            gx[i] = inv_std[j] / nf * (nf * dxhat[i] - sum[j] - xhat[i] * sum_x[j]);
                        }
                    } else {
                        for i in 0..n * m {
                            gx[i] = dxhat[i] * inv_std[i % m];
                        }
                    }
                    accumulate(grads, *x, &gx);
                }
            }
            Op::Bce {
                yhat,
                targets,
                weights,
            } => {
                let n = targets.len() as f64;
                let gy: Vec<f64> = val(*yhat)
                    .data()
                    .iter()
                    .zip(targets)
                    .enumerate()
                    .map(|(i, (&p, &y))| {
                        let w = weights.as_ref().map_or(1.0, |w| w[i]);
                        g[0] * w * bce_term_grad(p, y) / n
                    })
                    .collect();
                accumulate(grads, *yhat, &gy);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.idx] {
        Some(acc) => {
            for (a, d) in acc.iter_mut().zip(g) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    // 1 - 2^-53 is the largest double below one
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `H(p, y)` with `p` clipped to `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn bce_term_grad(p: f64, y: f64) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
        return 0.0;
    }
    -y / p + (1.0 - y) / (1.0 - p)
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    graph: u64,
    by_param: BTreeMap<(StoreId, String), Vec<f64>>,
    by_node: BTreeMap<usize, Vec<f64>>,
}

impl Gradients {
    /// Gradient with respect to a leaf created by [`Graph::variable`].
    /// `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        if v.graph != self.graph {
            return None;
        }
        self.by_node.get(&v.idx).map(Vec::as_slice)
    }

    /// Accumulated gradient of a named parameter, if it was reached.
    pub fn param(&self, store: StoreId, name: &str) -> Option<&[f64]> {
        self.by_param
            .get(&(store, name.to_string()))
            .map(Vec::as_slice)
    }

    /// Whether any parameter of `store` received a gradient.
    pub fn touches(&self, store: StoreId) -> bool {
        self.by_param.keys().any(|(s, _)| *s == store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(0.0));
        let s = g.sigmoid(x).unwrap();
        // d/dx of a one-element mean loss equals the node derivative
        let loss = g.scale(s, 1.0).unwrap();
        assert_eq!(g.scalar(loss), 0.5);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[0.25]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(1.0));
        let y = g.scale(x, 2.0).unwrap();
        g.backward(y).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn foreign_variable_rejected() {
        let mut a = Graph::new();
        let mut b = Graph::new();
        let x = a.variable(Tensor::scalar(1.0));
        assert!(matches!(b.backward(x), Err(Error::Usage(_))));
        assert!(b.scale(x, 1.0).is_err());
    }

    #[test]
    fn unreached_leaf_has_no_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(1.0));
        let y = g.variable(Tensor::scalar(3.0));
        let loss = g.scale(x, 4.0).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[4.0]);
        assert!(grads.wrt(y).is_none());
    }

    #[test]
    fn bce_reference_values() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::scalar(0.5));
        let l = g.bce(p, &[1.0]).unwrap();
        assert!((g.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);

        let p = g.constant(Tensor::scalar(0.9));
        let l = g.bce(p, &[0.0]).unwrap();
        assert!((g.scalar(l) - 2.302585092994046).abs() < 1e-12);

        let p = g.constant(Tensor::scalar(1.0 - BCE_EPS));
        let l = g.bce(p, &[1.0]).unwrap();
        assert!(g.scalar(l) < 1.1e-7);
    }

    #[test]
    fn bce_rejects_soft_targets() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::scalar(0.5));
        assert!(matches!(g.bce(p, &[0.3]), Err(Error::Spec(_))));
    }

    #[test]
    fn bce_is_finite_at_extremes() {
        let mut g = Graph::new();
        let p = g.variable(t(vec![4], vec![0.0, 1.0, f64::MIN_POSITIVE, 1.0 - 1e-16]));
        let l = g.bce(p, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(g.scalar(l).is_finite());
        let grads = g.backward(l).unwrap();
        assert!(grads.wrt(p).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn matmul_gradients() {
        // loss = sum(A B) scaled; dL/dA = 1 B^T, dL/dB = A^T 1
        let mut g = Graph::new();
        let a = g.variable(t(vec![1, 2], vec![1.0, 2.0]));
        let b = g.variable(t(vec![2, 1], vec![3.0, 4.0]));
        let y = g.matmul(a, b).unwrap();
        assert_eq!(g.scalar(y), 11.0);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(a).unwrap(), &[3.0, 4.0]);
        assert_eq!(grads.wrt(b).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn sigmoid_stays_inside_unit_interval() {
        for v in [-1e6, -800.0, -40.0, 0.0, 40.0, 800.0, 1e6] {
            let s = sigmoid(v);
            assert!(s > 0.0 && s < 1.0, "{v} -> {s}");
        }
    }
}
