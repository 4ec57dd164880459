//! Reverse-mode differentiation over dense matrices.
//!
//! The tape holds exactly the primitives the model needs: affine layers,
//! the usual smooth activations, a per-row power with learned exponent,
//! stick-breaking, and the scalar reductions of the training objective.
//! Values are computed eagerly at node creation; `backward` runs one
//! reverse sweep in construction order (which is topological).

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Clamp bounds applied by [`Tape::clamp_unit`] before the Kumaraswamy
/// power transform.
pub const UNIT_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    MatMul(NodeId, NodeId),
    AddRowBias(NodeId, NodeId),
    ConcatCols(NodeId, NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Tanh(NodeId),
    /// base^(1/beta), beta a per-row column.
    PowInv { base: NodeId, beta: NodeId },
    Mul(NodeId, NodeId),
    Sub(NodeId, NodeId),
    ClampUnit(NodeId),
    StickBreak(NodeId),
    RowL21(NodeId),
    EntropyH1(NodeId),
    /// mean over entries of -softplus(-x); the Jensen-Shannon MI term.
    SoftplusMean(NodeId),
    ScalarCombine { terms: Vec<NodeId>, coeffs: Vec<f64> },
}

struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.shape(), (1, 1));
        v.get(0, 0)
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Param, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    /// Broadcast a 1xC bias over every row of a PxC matrix.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape(format!(
                "row bias must be 1x{}, got {}x{}",
                xv.cols(),
                bv.rows(),
                bv.cols()
            )));
        }
        let mut value = xv.clone();
        for i in 0..value.rows() {
            for (o, &b) in value.row_mut(i).iter_mut().zip(bv.row(0)) {
                *o += b;
            }
        }
        Ok(self.push(Op::AddRowBias(x, bias), value))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::shape(format!(
                "concat_cols row counts disagree: {} vs {}",
                av.rows(),
                bv.rows()
            )));
        }
        let (p, ca, cb) = (av.rows(), av.cols(), bv.cols());
        let mut value = Matrix::zeros(p, ca + cb);
        for i in 0..p {
            value.row_mut(i)[..ca].copy_from_slice(av.row(i));
            value.row_mut(i)[ca..].copy_from_slice(bv.row(i));
        }
        Ok(self.push(Op::ConcatCols(a, b), value))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), value)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(softplus);
        self.push(Op::Softplus(x), value)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), value)
    }

    /// Entrywise `base^(1/beta)`, `beta` a strictly positive per-row column.
    pub fn pow_inv(&mut self, base: NodeId, beta: NodeId) -> Result<NodeId> {
        let (bv, ev) = (self.value(base), self.value(beta));
        if ev.cols() != 1 || ev.rows() != bv.rows() {
            return Err(Error::shape(format!(
                "pow_inv exponent must be {}x1, got {}x{}",
                bv.rows(),
                ev.rows(),
                ev.cols()
            )));
        }
        if bv.values().iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain(
                "pow_inv requires strictly positive base entries".into(),
            ));
        }
        if ev.values().iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain(
                "pow_inv requires strictly positive exponents".into(),
            ));
        }
        let mut value = bv.clone();
        for i in 0..value.rows() {
            let e = 1.0 / ev.get(i, 0);
            for v in value.row_mut(i) {
                *v = v.powf(e);
            }
        }
        Ok(self.push(Op::PowInv { base, beta }, value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    /// Clamp into [UNIT_CLAMP, 1 - UNIT_CLAMP]; gradient passes through
    /// only where no clamping occurred.
    pub fn clamp_unit(&mut self, x: NodeId) -> NodeId {
        let value = self
            .value(x)
            .map(|v| v.clamp(UNIT_CLAMP, 1.0 - UNIT_CLAMP));
        self.push(Op::ClampUnit(x), value)
    }

    /// Rows of `v` in (0,1); column j of the result takes fraction v_j of
    /// the remaining stick, and the last column is the whole remainder
    /// (so the final v column is unused and rows sum to one exactly).
    pub fn stick_break(&mut self, v: NodeId) -> NodeId {
        let vv = self.value(v);
        let (p, k) = vv.shape();
        let mut value = Matrix::zeros(p, k);
        for i in 0..p {
            let vr = vv.row(i);
            let sr = value.row_mut(i);
            let mut rest = 1.0;
            for j in 0..k - 1 {
                sr[j] = vr[j] * rest;
                rest *= 1.0 - vr[j];
            }
            sr[k - 1] = rest;
        }
        self.push(Op::StickBreak(v), value)
    }

    /// Sum over rows of the Euclidean row norm, as a 1x1 node.
    pub fn row_l21(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let total: f64 = (0..xv.rows())
            .map(|i| xv.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum();
        self.push(Op::RowL21(x), Matrix::from_vec(1, 1, vec![total]))
    }

    /// Sum over rows of the Shannon entropy (natural log) of each
    /// L1-normalized row, as a 1x1 node. Rows must be non-negative;
    /// zero entries contribute 0 and an all-zero row counts as entropy 0.
    pub fn entropy_h1(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut total = 0.0;
        for i in 0..xv.rows() {
            let row = xv.row(i);
            let sigma: f64 = row.iter().sum();
            if sigma <= 0.0 {
                log::warn!("entropy_h1: all-zero row {i}, treating entropy as 0");
                continue;
            }
            let a: f64 = row.iter().map(|&s| if s > 0.0 { s * s.ln() } else { 0.0 }).sum();
            total += sigma.ln() - a / sigma;
        }
        self.push(Op::EntropyH1(x), Matrix::from_vec(1, 1, vec![total]))
    }

    /// Mean over entries of -softplus(-x), as a 1x1 node.
    pub fn softplus_mean(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let n = xv.values().len() as f64;
        let total: f64 = xv.values().iter().map(|&v| -softplus(-v)).sum();
        self.push(Op::SoftplusMean(x), Matrix::from_vec(1, 1, vec![total / n]))
    }

    /// Weighted sum of 1x1 nodes.
    pub fn scalar_combine(&mut self, parts: &[(NodeId, f64)]) -> Result<NodeId> {
        let mut total = 0.0;
        for &(id, c) in parts {
            let v = self.value(id);
            if v.shape() != (1, 1) {
                return Err(Error::shape(format!(
                    "scalar_combine needs 1x1 terms, got {}x{}",
                    v.rows(),
                    v.cols()
                )));
            }
            total += c * v.get(0, 0);
        }
        let (terms, coeffs) = parts.iter().copied().unzip();
        Ok(self.push(
            Op::ScalarCombine { terms, coeffs },
            Matrix::from_vec(1, 1, vec![total]),
        ))
    }

    /// Reverse sweep from a scalar loss node. Returns one adjoint per node
    /// (allocated lazily; untouched nodes stay `None`).
    pub fn backward(&self, loss: NodeId) -> Result<Adjoints> {
        if self.value(loss).shape() != (1, 1) {
            let (r, c) = self.value(loss).shape();
            return Err(Error::shape(format!(
                "backward requires a scalar loss node, got {r}x{c}"
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let Some(grad) = adj[idx].take() else {
                continue;
            };
            self.accumulate(idx, &grad, &mut adj)?;
            adj[idx] = Some(grad);
        }
        Ok(Adjoints { adj })
    }

    fn accumulate(
        &self,
        idx: usize,
        grad: &Matrix,
        adj: &mut [Option<Matrix>],
    ) -> Result<()> {
        let add = |adj: &mut [Option<Matrix>], id: NodeId, contrib: Matrix| {
            match &mut adj[id.0] {
                Some(a) => a.add_assign(&contrib),
                slot => *slot = Some(contrib),
            }
        };
        match &self.nodes[idx].op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let ga = grad.matmul_nt(self.value(*b))?;
                let gb = self.value(*a).matmul_tn(grad)?;
                add(adj, *a, ga);
                add(adj, *b, gb);
            }
            Op::AddRowBias(x, bias) => {
                add(adj, *x, grad.clone());
                add(adj, *bias, grad.col_sums());
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let (p, c) = grad.shape();
                let mut ga = Matrix::zeros(p, ca);
                let mut gb = Matrix::zeros(p, c - ca);
                for i in 0..p {
                    ga.row_mut(i).copy_from_slice(&grad.row(i)[..ca]);
                    gb.row_mut(i).copy_from_slice(&grad.row(i)[ca..]);
                }
                add(adj, *a, ga);
                add(adj, *b, gb);
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[idx].value;
                let g = grad.zip_map(y, |g, y| g * y * (1.0 - y))?;
                add(adj, *x, g);
            }
            Op::Softplus(x) => {
                let g = grad.zip_map(self.value(*x), |g, x| g * sigmoid(x))?;
                add(adj, *x, g);
            }
            Op::Tanh(x) => {
                let y = &self.nodes[idx].value;
                let g = grad.zip_map(y, |g, y| g * (1.0 - y * y))?;
                add(adj, *x, g);
            }
            Op::PowInv { base, beta } => {
                let y = &self.nodes[idx].value;
                let bv = self.value(*base);
                let ev = self.value(*beta);
                let (p, k) = y.shape();
                let mut gbase = Matrix::zeros(p, k);
                let mut gbeta = Matrix::zeros(p, 1);
                for i in 0..p {
                    let beta_i = ev.get(i, 0);
                    let e = 1.0 / beta_i;
                    let mut acc = 0.0;
                    for j in 0..k {
                        let g = grad.get(i, j);
                        let b = bv.get(i, j);
                        let yv = y.get(i, j);
                        gbase.set(i, j, g * e * yv / b);
                        acc += g * (-yv * b.ln() / (beta_i * beta_i));
                    }
                    gbeta.set(i, 0, acc);
                }
                add(adj, *base, gbase);
                add(adj, *beta, gbeta);
            }
            Op::Mul(a, b) => {
                let ga = grad.zip_map(self.value(*b), |g, b| g * b)?;
                let gb = grad.zip_map(self.value(*a), |g, a| g * a)?;
                add(adj, *a, ga);
                add(adj, *b, gb);
            }
            Op::Sub(a, b) => {
                add(adj, *a, grad.clone());
                add(adj, *b, grad.scale(-1.0));
            }
            Op::ClampUnit(x) => {
                let g = grad.zip_map(self.value(*x), |g, x| {
                    if x > UNIT_CLAMP && x < 1.0 - UNIT_CLAMP {
                        g
                    } else {
                        0.0
                    }
                })?;
                add(adj, *x, g);
            }
            Op::StickBreak(v) => {
                let vv = self.value(*v);
                let sv = &self.nodes[idx].value;
                let (p, k) = vv.shape();
                let mut gv = Matrix::zeros(p, k);
                for i in 0..p {
                    let vr = vv.row(i);
                    let sr = sv.row(i);
                    let gr = grad.row(i);
                    // prefix[j] = prod_{t<j} (1 - v_t)
                    let mut prefix = 1.0;
                    for t in 0..k - 1 {
                        let mut g = gr[t] * prefix;
                        let one_minus = 1.0 - vr[t];
                        for j in t + 1..k - 1 {
                            g -= gr[j] * sr[j] / one_minus;
                        }
                        g -= gr[k - 1] * sr[k - 1] / one_minus;
                        gv.set(i, t, g);
                        prefix *= one_minus;
                    }
                }
                add(adj, *v, gv);
            }
            Op::RowL21(x) => {
                let xv = self.value(*x);
                let g0 = grad.get(0, 0);
                let (p, c) = xv.shape();
                let mut gx = Matrix::zeros(p, c);
                for i in 0..p {
                    let row = xv.row(i);
                    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        for (o, &v) in gx.row_mut(i).iter_mut().zip(row) {
                            *o = g0 * v / norm;
                        }
                    }
                }
                add(adj, *x, gx);
            }
            Op::EntropyH1(x) => {
                let xv = self.value(*x);
                let g0 = grad.get(0, 0);
                let (p, c) = xv.shape();
                let mut gx = Matrix::zeros(p, c);
                for i in 0..p {
                    let row = xv.row(i);
                    let sigma: f64 = row.iter().sum();
                    if sigma <= 0.0 {
                        continue;
                    }
                    let a: f64 = row
                        .iter()
                        .map(|&s| if s > 0.0 { s * s.ln() } else { 0.0 })
                        .sum();
                    for (o, &s) in gx.row_mut(i).iter_mut().zip(row) {
                        if s > 0.0 {
                            *o = g0 * (a / (sigma * sigma) - s.ln() / sigma);
                        }
                    }
                }
                add(adj, *x, gx);
            }
            Op::SoftplusMean(x) => {
                let xv = self.value(*x);
                let n = xv.values().len() as f64;
                let g0 = grad.get(0, 0);
                let gx = xv.map(|v| g0 * sigmoid(-v) / n);
                add(adj, *x, gx);
            }
            Op::ScalarCombine { terms, coeffs } => {
                for (&t, &c) in terms.iter().zip(coeffs) {
                    add(adj, t, grad.scale(c));
                }
            }
        }
        Ok(())
    }
}

pub struct Adjoints {
    adj: Vec<Option<Matrix>>,
}

impl Adjoints {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.adj[id.0].as_ref()
    }

    /// Adjoint of `id`, or zeros of the given shape if the node was never
    /// reached by the sweep.
    pub fn grad_or_zeros(&self, id: NodeId, rows: usize, cols: usize) -> Matrix {
        match self.adj[id.0].as_ref() {
            Some(m) => m.clone(),
            None => Matrix::zeros(rows, cols),
        }
    }
}
