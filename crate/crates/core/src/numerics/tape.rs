//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Operations
//! append a node and return a [`Var`] handle; [`Tape::backward`] walks the
//! nodes in reverse creation order, which is a valid topological order because
//! a node can only reference nodes created before it.

use std::rc::Rc;

use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `b` is broadcast over the rows of `a` when `broadcast` is set.
    Binary {
        kind: Binary,
        a: Var,
        b: Var,
        broadcast: bool,
    },
    ScaleRows(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    Transpose(Var),
    GatherRows(Var, Rc<[usize]>),
    SegmentSum(Var, Rc<[usize]>),
    SegmentMean(Var, Rc<[usize]>, Vec<f64>),
    NormalizeRows(Var, f64),
    SumRows(Var),
    SumAll(Var),
    MeanAll(Var),
    LogSumExpRows(Var, Option<Rc<Tensor>>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reduction applied by [`Tape::segment_reduce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentMode {
    Sum,
    Mean,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last [`Tape::backward`] loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn unary(&mut self, a: Var, value: Tensor, op: Op) -> Var {
        let ng = self.needs(a);
        self.push(value, op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(TensorError::Dimension {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let value = self.value(a).matmul_raw(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let broadcast = if sa == sb {
            false
        } else if sb.0 == 1 && sa.1 == sb.1 {
            true
        } else {
            return Err(TensorError::Dimension {
                op: match kind {
                    Binary::Add => "add",
                    Binary::Sub => "sub",
                    Binary::Mul => "mul",
                },
                left: sa,
                right: sb,
            });
        };
        let f = match kind {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
        };
        let (ta, tb) = (self.value(a), self.value(b));
        let value = if broadcast {
            let mut out = ta.clone();
            let bias = tb.data();
            for r in 0..sa.0 {
                for (o, &y) in out.row_mut(r).iter_mut().zip(bias) {
                    *o = f(*o, y);
                }
            }
            out
        } else {
            ta.zip_map(tb, f)
        };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(
            value,
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            },
            ng,
        ))
    }

    /// Entrywise sum; `b` may be a `1 x d` row broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Mul, a, b)
    }

    /// Row-wise product: row `i` of `x` scaled by `s[i]`, with `s` an `n x 1` column.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var, TensorError> {
        let (sx, ss) = (self.shape(x), self.shape(s));
        if ss != (sx.0, 1) {
            return Err(TensorError::Dimension {
                op: "scale_rows",
                left: sx,
                right: ss,
            });
        }
        let mut value = self.value(x).clone();
        let scale = self.value(s).data().to_vec();
        for (r, &c) in scale.iter().enumerate() {
            value.row_mut(r).iter_mut().for_each(|v| *v *= c);
        }
        let ng = self.needs(x) || self.needs(s);
        Ok(self.push(value, Op::ScaleRows(x, s), ng))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.unary(a, value, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.unary(a, value, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.unary(a, value, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        // NaN passes through so divergence stays visible.
        let value = self.value(a).map(|x| if x < 0.0 { 0.0 } else { x });
        self.unary(a, value, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.unary(a, value, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        if let Some((index, &value)) = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .find(|(_, &x)| x.is_nan() || x <= 0.0)
        {
            return Err(TensorError::Domain {
                op: "log",
                index,
                value,
            });
        }
        let value = self.value(a).map(f64::ln);
        Ok(self.unary(a, value, Op::Log(a)))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.unary(a, value, Op::Softplus(a))
    }

    /// Gradient passes through entries inside `[lo, hi]` and is zero outside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.unary(a, value, Op::Clamp(a, lo, hi))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.unary(a, value, Op::Transpose(a))
    }

    /// Output row `k` is row `index[k]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Rc<[usize]>) -> Result<Var, TensorError> {
        let src = self.value(x);
        let (rows, cols) = src.shape();
        let mut data = Vec::with_capacity(index.len() * cols);
        for (position, &i) in index.iter().enumerate() {
            if i >= rows {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    position,
                    index: i,
                    bound: rows,
                });
            }
            data.extend_from_slice(src.row(i));
        }
        let value = Tensor::new(index.len(), cols, data)?;
        Ok(self.unary(x, value, Op::GatherRows(x, index)))
    }

    /// Output row `s` is the sum (or mean) of the rows of `x` whose segment id
    /// is `s`. Empty segments produce zero rows.
    pub fn segment_reduce(
        &mut self,
        x: Var,
        segments: Rc<[usize]>,
        mode: SegmentMode,
        num_segments: usize,
    ) -> Result<Var, TensorError> {
        let src = self.value(x);
        let (rows, cols) = src.shape();
        if segments.len() != rows {
            return Err(TensorError::Dimension {
                op: "segment_reduce",
                left: (rows, cols),
                right: (segments.len(), 1),
            });
        }
        let mut out = Tensor::zeros(num_segments, cols);
        let mut counts = vec![0usize; num_segments];
        for (position, &s) in segments.iter().enumerate() {
            if s >= num_segments {
                return Err(TensorError::Index {
                    op: "segment_reduce",
                    position,
                    index: s,
                    bound: num_segments,
                });
            }
            counts[s] += 1;
            for (o, &v) in out.row_mut(s).iter_mut().zip(src.row(position)) {
                *o += v;
            }
        }
        let op = match mode {
            SegmentMode::Sum => Op::SegmentSum(x, segments),
            SegmentMode::Mean => {
                let inv: Vec<f64> = counts
                    .iter()
                    .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
                    .collect();
                for (s, &w) in inv.iter().enumerate() {
                    out.row_mut(s).iter_mut().for_each(|v| *v *= w);
                }
                Op::SegmentMean(x, segments, inv)
            }
        };
        Ok(self.unary(x, out, op))
    }

    /// Each row divided by `(‖row‖₂ + eps)`.
    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= norm + eps);
        }
        self.unary(x, value, Op::NormalizeRows(x, eps))
    }

    /// `n x d -> n x 1`
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let sums = (0..src.rows()).map(|r| src.row(r).iter().sum()).collect();
        self.unary(x, Tensor::column(sums), Op::SumRows(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.unary(x, value, Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        self.unary(x, value, Op::MeanAll(x))
    }

    /// Per-row `ln Σ_j mask_ij · exp(x_ij)`, stabilized by the row maximum.
    /// Every row must keep at least one entry.
    pub fn log_sum_exp_rows(
        &mut self,
        x: Var,
        mask: Option<Rc<Tensor>>,
    ) -> Result<Var, TensorError> {
        let src = self.value(x);
        if let Some(m) = &mask {
            if m.shape() != src.shape() {
                return Err(TensorError::Dimension {
                    op: "log_sum_exp_rows",
                    left: src.shape(),
                    right: m.shape(),
                });
            }
        }
        let mut out = Vec::with_capacity(src.rows());
        for r in 0..src.rows() {
            let row = src.row(r);
            let keep = |c: usize| mask.as_ref().is_none_or(|m| m.get(r, c) != 0.0);
            if (0..row.len()).any(|c| keep(c) && row[c].is_nan()) {
                out.push(f64::NAN);
                continue;
            }
            let max = (0..row.len())
                .filter(|&c| keep(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TensorError::Degenerate {
                    op: "log_sum_exp_rows",
                    reason: format!("row {r} has no unmasked entries"),
                });
            }
            let s: f64 = (0..row.len())
                .filter(|&c| keep(c))
                .map(|c| mask.as_ref().map_or(1.0, |m| m.get(r, c)) * (row[c] - max).exp())
                .sum();
            out.push(max + s.ln());
        }
        Ok(self.unary(x, Tensor::column(out), Op::LogSumExpRows(x, mask)))
    }

    /// Reverse pass from a scalar `loss`. Previous gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TensorError::Usage(format!(
                "backward requires a 1x1 loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let nodes = &self.nodes;
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop_node(nodes, &mut grads, node, &g);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    if !nodes[v.0].needs_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn backprop_node(nodes: &[Node], grads: &mut [Option<Tensor>], node: &Node, g: &Tensor) {
    let val = |v: Var| &nodes[v.0].value;
    let needs = |v: Var| nodes[v.0].needs_grad;
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if needs(*a) {
                accumulate(nodes, grads, *a, g.matmul_nt(val(*b)));
            }
            if needs(*b) {
                accumulate(nodes, grads, *b, val(*a).matmul_tn(g));
            }
        }
        Op::Binary {
            kind,
            a,
            b,
            broadcast,
        } => {
            let (ta, tb) = (val(*a), val(*b));
            if needs(*a) {
                let ga = match kind {
                    Binary::Add | Binary::Sub => g.clone(),
                    Binary::Mul if *broadcast => {
                        let mut out = g.clone();
                        for r in 0..out.rows() {
                            for (o, &w) in out.row_mut(r).iter_mut().zip(tb.data()) {
                                *o *= w;
                            }
                        }
                        out
                    }
                    Binary::Mul => g.zip_map(tb, |x, w| x * w),
                };
                accumulate(nodes, grads, *a, ga);
            }
            if needs(*b) {
                let per_entry = match kind {
                    Binary::Add => g.clone(),
                    Binary::Sub => g.map(|x| -x),
                    Binary::Mul => g.zip_map(ta, |x, w| x * w),
                };
                let gb = if *broadcast {
                    let mut acc = Tensor::zeros(1, per_entry.cols());
                    for r in 0..per_entry.rows() {
                        for (o, &v) in acc.data_mut().iter_mut().zip(per_entry.row(r)) {
                            *o += v;
                        }
                    }
                    acc
                } else {
                    per_entry
                };
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::ScaleRows(x, s) => {
            let (tx, ts) = (val(*x), val(*s));
            if needs(*x) {
                let mut gx = g.clone();
                for (r, &c) in ts.data().iter().enumerate() {
                    gx.row_mut(r).iter_mut().for_each(|v| *v *= c);
                }
                accumulate(nodes, grads, *x, gx);
            }
            if needs(*s) {
                let gs = (0..tx.rows())
                    .map(|r| g.row(r).iter().zip(tx.row(r)).map(|(a, b)| a * b).sum())
                    .collect();
                accumulate(nodes, grads, *s, Tensor::column(gs));
            }
        }
        Op::Scale(a, f) => accumulate(nodes, grads, *a, g.map(|x| x * f)),
        Op::AddScalar(a) => accumulate(nodes, grads, *a, g.clone()),
        Op::Sigmoid(a) => accumulate(nodes, grads, *a, g.zip_map(y, |g, s| g * s * (1.0 - s))),
        Op::Relu(a) => accumulate(
            nodes,
            grads,
            *a,
            g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 }),
        ),
        Op::Exp(a) => accumulate(nodes, grads, *a, g.zip_map(y, |g, e| g * e)),
        Op::Log(a) => accumulate(nodes, grads, *a, g.zip_map(val(*a), |g, x| g / x)),
        Op::Softplus(a) => accumulate(nodes, grads, *a, g.zip_map(val(*a), |g, x| g * sigmoid(x))),
        Op::Clamp(a, lo, hi) => accumulate(
            nodes,
            grads,
            *a,
            g.zip_map(val(*a), |g, x| if x >= *lo && x <= *hi { g } else { 0.0 }),
        ),
        Op::Transpose(a) => accumulate(nodes, grads, *a, g.transpose()),
        Op::GatherRows(x, index) => {
            let src = val(*x);
            let mut gx = Tensor::zeros(src.rows(), src.cols());
            for (k, &i) in index.iter().enumerate() {
                for (o, &v) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                    *o += v;
                }
            }
            accumulate(nodes, grads, *x, gx);
        }
        Op::SegmentSum(x, segments) => {
            let src = val(*x);
            let mut gx = Tensor::zeros(src.rows(), src.cols());
            for (k, &s) in segments.iter().enumerate() {
                gx.row_mut(k).copy_from_slice(g.row(s));
            }
            accumulate(nodes, grads, *x, gx);
        }
        Op::SegmentMean(x, segments, inv) => {
            let src = val(*x);
            let mut gx = Tensor::zeros(src.rows(), src.cols());
            for (k, &s) in segments.iter().enumerate() {
                for (o, &v) in gx.row_mut(k).iter_mut().zip(g.row(s)) {
                    *o = v * inv[s];
                }
            }
            accumulate(nodes, grads, *x, gx);
        }
        Op::NormalizeRows(x, eps) => {
            let src = val(*x);
            let mut gx = Tensor::zeros(src.rows(), src.cols());
            for r in 0..src.rows() {
                let xr = src.row(r);
                let gr = g.row(r);
                let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                let denom = norm + eps;
                let dot: f64 = gr.iter().zip(xr).map(|(a, b)| a * b).sum();
                let coupling = if norm > 0.0 {
                    dot / (norm * denom * denom)
                } else {
                    0.0
                };
                for ((o, &gi), &xi) in gx.row_mut(r).iter_mut().zip(gr).zip(xr) {
                    *o = gi / denom - xi * coupling;
                }
            }
            accumulate(nodes, grads, *x, gx);
        }
        Op::SumRows(x) => {
            let src = val(*x);
            let mut gx = Tensor::zeros(src.rows(), src.cols());
            for r in 0..src.rows() {
                let gv = g.get(r, 0);
                gx.row_mut(r).iter_mut().for_each(|v| *v = gv);
            }
            accumulate(nodes, grads, *x, gx);
        }
        Op::SumAll(x) => {
            let (r, c) = val(*x).shape();
            accumulate(nodes, grads, *x, Tensor::filled(r, c, g.data()[0]));
        }
        Op::MeanAll(x) => {
            let (r, c) = val(*x).shape();
            let n = (r * c) as f64;
            accumulate(nodes, grads, *x, Tensor::filled(r, c, g.data()[0] / n));
        }
        Op::LogSumExpRows(x, mask) => {
            let src = val(*x);
            let mut gx = Tensor::zeros(src.rows(), src.cols());
            for r in 0..src.rows() {
                let lse = y.get(r, 0);
                let gr = g.get(r, 0);
                for c in 0..src.cols() {
                    let w = mask.as_ref().map_or(1.0, |m| m.get(r, c));
                    if w != 0.0 {
                        gx.set(r, c, gr * w * (src.get(r, c) - lse).exp());
                    }
                }
            }
            accumulate(nodes, grads, *x, gx);
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
