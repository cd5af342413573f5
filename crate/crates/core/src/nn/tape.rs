//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records a define-by-run graph of matrix operations; calling
//! [`Tape::backward`] walks the recorded nodes in reverse and accumulates
//! exact gradients into the [`ParamStore`]. Tapes remember the parameter
//! version they were built against and refuse to backpropagate once the
//! parameters have moved on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::linalg::{self, Mat};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
struct ParamEntry {
    name: String,
    value: Mat,
    grad: Mat,
}

/// Owns every trainable parameter of one model plus its gradient
/// accumulators. The version counter increments on any mutation.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    version: u64,
}

/// Parameter initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Uniform in ±limit.
    Uniform(f64),
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Xavier,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn alloc(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut ChaCha12Rng,
    ) -> ParamId {
        let mut value = Mat::zeros(rows, cols);
        match init {
            Init::Zeros => {}
            Init::Const(c) => value.fill(c),
            Init::Uniform(limit) => {
                for v in &mut value.data {
                    *v = (rng.gen::<f64>() * 2.0 - 1.0) * limit;
                }
            }
            Init::Xavier => {
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                for v in &mut value.data {
                    *v = (rng.gen::<f64>() * 2.0 - 1.0) * limit;
                }
            }
        }
        let grad = Mat::zeros(rows, cols);
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.entries[id.0].value
    }

    /// Mutable access for optimizers and tests. Bumps the version: any
    /// existing tape becomes stale.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        self.version += 1;
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Mat {
        &self.entries[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.data.len()).sum()
    }

    /// Deterministic stream for parameter initialization.
    pub fn init_rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    pub(crate) fn entries_for_save(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    /// Replaces parameter values by name, validating shapes. Used by
    /// checkpoint loading; every stored parameter must be supplied.
    pub fn load_values(&mut self, values: &[(String, Mat)]) -> Result<()> {
        if values.len() != self.entries.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} parameters, model expects {}",
                values.len(),
                self.entries.len()
            )));
        }
        for (name, m) in values {
            let e = self
                .entries
                .iter_mut()
                .find(|e| &e.name == name)
                .ok_or_else(|| Error::Shape(format!("unexpected parameter `{name}`")))?;
            if e.value.shape() != m.shape() {
                return Err(Error::Shape(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    m.shape(),
                    e.value.shape()
                )));
            }
            e.value = m.clone();
        }
        self.version += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    /// a · bᵀ
    MatMulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// matrix + broadcast 1×d bias row
    AddBias(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    ConcatCols(Vec<NodeId>),
    /// mean squared error against a constant target, scalar output
    MseLoss(NodeId, Mat),
    /// mean absolute error against a constant target, scalar output
    MaeLoss(NodeId, Mat),
    /// softmax cross-entropy against integer class targets, scalar output
    CrossEntropy(NodeId, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    version: u64,
}

impl Tape {
    pub fn new(store: &ParamStore) -> Tape {
        Tape {
            nodes: Vec::new(),
            version: store.version(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let m = self.value(id);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data[0]
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Const)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<NodeId> {
        if store.version() != self.version {
            return Err(Error::StaleTape);
        }
        Ok(self.push(store.value(id).clone(), Op::Param(id)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = linalg::matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = linalg::matmul_nt(self.value(a), self.value(b));
        self.push(v, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = linalg::add(self.value(a), self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let v = linalg::add_bias(self.value(a), self.value(bias));
        self.push(v, Op::AddBias(a, bias))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = linalg::scale(self.value(a), s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = linalg::relu(self.value(a));
        self.push(v, Op::Relu(a))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = linalg::gelu(self.value(a));
        self.push(v, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = linalg::softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let v = linalg::concat_cols(&mats);
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn mse_loss(&mut self, pred: NodeId, target: Mat) -> NodeId {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape());
        let n = p.data.len() as f64;
        let loss: f64 = p
            .data
            .iter()
            .zip(&target.data)
            .map(|(x, t)| (x - t) * (x - t))
            .sum::<f64>()
            / n;
        self.push(Mat::from_vec(1, 1, vec![loss]), Op::MseLoss(pred, target))
    }

    pub fn mae_loss(&mut self, pred: NodeId, target: Mat) -> NodeId {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape());
        let n = p.data.len() as f64;
        let loss: f64 = p
            .data
            .iter()
            .zip(&target.data)
            .map(|(x, t)| (x - t).abs())
            .sum::<f64>()
            / n;
        self.push(Mat::from_vec(1, 1, vec![loss]), Op::MaeLoss(pred, target))
    }

    /// Mean over rows of softmax cross-entropy against `targets`.
    pub fn cross_entropy_loss(&mut self, logits: NodeId, targets: Vec<usize>) -> NodeId {
        let l = self.value(logits);
        assert_eq!(l.rows, targets.len());
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = l.row(r);
            assert!(t < row.len(), "class target out of range");
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let logsum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            loss += logsum - row[t];
        }
        loss /= targets.len() as f64;
        self.push(Mat::from_vec(1, 1, vec![loss]), Op::CrossEntropy(logits, targets))
    }

    /// Reverse pass from a scalar loss node; accumulates parameter
    /// gradients into `store`.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        if store.version() != self.version {
            return Err(Error::StaleTape);
        }
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![1.0]));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let accum = |grads: &mut Vec<Option<Mat>>, id: NodeId, delta: Mat| {
                match &mut grads[id.0] {
                    Some(existing) => existing.add_assign(&delta),
                    slot => *slot = Some(delta),
                }
            };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param(pid) => {
                    store.entries[pid.0].grad.add_assign(&g);
                }
                Op::MatMul(a, b) => {
                    let ga = linalg::matmul_nt(&g, self.value(*b));
                    let gb = linalg::matmul_tn(self.value(*a), &g);
                    accum(&mut grads, *a, ga);
                    accum(&mut grads, *b, gb);
                }
                Op::MatMulNT(a, b) => {
                    // y = a·bᵀ: ga = g·b, gb = gᵀ·a
                    let ga = linalg::matmul(&g, self.value(*b));
                    let gb = linalg::matmul_tn(&g, self.value(*a));
                    accum(&mut grads, *a, ga);
                    accum(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accum(&mut grads, *a, g.clone());
                    accum(&mut grads, *b, g);
                }
                Op::AddBias(a, bias) => {
                    let mut gb = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (acc, &v) in gb.data.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accum(&mut grads, *a, g);
                    accum(&mut grads, *bias, gb);
                }
                Op::Scale(a, s) => {
                    accum(&mut grads, *a, linalg::scale(&g, *s));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let data = x
                        .data
                        .iter()
                        .zip(&g.data)
                        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                        .collect();
                    accum(&mut grads, *a, Mat::from_vec(x.rows, x.cols, data));
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let data = x
                        .data
                        .iter()
                        .zip(&g.data)
                        .map(|(&x, &g)| g * linalg::gelu_grad_scalar(x))
                        .collect();
                    accum(&mut grads, *a, Mat::from_vec(x.rows, x.cols, data));
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[i].value;
                    let mut ga = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for (o, (&yv, &gv)) in
                            ga.row_mut(r).iter_mut().zip(yr.iter().zip(gr))
                        {
                            *o = yv * (gv - dot);
                        }
                    }
                    accum(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let mut gp = Mat::zeros(pv.rows, pv.cols);
                        for r in 0..pv.rows {
                            gp.row_mut(r)
                                .copy_from_slice(&g.row(r)[offset..offset + pv.cols]);
                        }
                        offset += pv.cols;
                        accum(&mut grads, p, gp);
                    }
                }
                Op::MseLoss(pred, target) => {
                    let p = self.value(*pred);
                    let s = g.data[0] * 2.0 / p.data.len() as f64;
                    let data = p
                        .data
                        .iter()
                        .zip(&target.data)
                        .map(|(x, t)| s * (x - t))
                        .collect();
                    accum(&mut grads, *pred, Mat::from_vec(p.rows, p.cols, data));
                }
                Op::MaeLoss(pred, target) => {
                    let p = self.value(*pred);
                    let s = g.data[0] / p.data.len() as f64;
                    let data = p
                        .data
                        .iter()
                        .zip(&target.data)
                        .map(|(x, t)| s * (x - t).signum())
                        .collect();
                    accum(&mut grads, *pred, Mat::from_vec(p.rows, p.cols, data));
                }
                Op::CrossEntropy(logits, targets) => {
                    let l = self.value(*logits);
                    let soft = linalg::softmax_rows(l);
                    let s = g.data[0] / targets.len() as f64;
                    let mut gl = linalg::scale(&soft, s);
                    for (r, &t) in targets.iter().enumerate() {
                        let v = gl.get(r, t);
                        gl.set(r, t, v - s);
                    }
                    accum(&mut grads, *logits, gl);
                }
            }
        }
        Ok(())
    }
}
