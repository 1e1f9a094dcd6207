//! Operation tape for reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and appends a node holding its value and
//! the recipe needed to differentiate it. Nodes only reference earlier nodes,
//! so the tape is always in topological order and `backward` is a single
//! reverse sweep.

use std::sync::Arc;

use rand::Rng as _;

use crate::error::{DiffError, Result};
use crate::rng::seeded;
use crate::tensor::{numel, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise operation selector for [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    PowConst(f64),
    Log,
    Clamp { lo: f64, hi: f64 },
    MaxConst(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    fn name(self) -> &'static str {
        match self {
            Self::Add => "add",
            Self::Sub => "sub",
            Self::Mul => "mul",
            Self::Div => "div",
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    PowConst {
        x: Var,
        exponent: f64,
    },
    Log(Var),
    Exp(Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    MaxConst {
        x: Var,
        floor: f64,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    SoftmaxRows(Var),
    /// `mask` holds the inverted-dropout scale per element (0 or 1/(1-p)).
    ReluDropout {
        x: Var,
        mask: Option<Vec<f64>>,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    GatherRows {
        x: Var,
        index: Arc<[usize]>,
    },
    ScatterAddRows {
        x: Var,
        index: Arc<[usize]>,
        rows: usize,
    },
    SegmentSoftmax {
        x: Var,
        segments: Arc<[usize]>,
        count: usize,
    },
    HeadDot {
        x: Var,
        att: Var,
    },
    HeadScale {
        x: Var,
        weights: Var,
    },
    Propagate {
        x: Var,
        weights: Var,
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
        rows: usize,
    },
    Select {
        mask: Vec<bool>,
        a: Var,
        b: Var,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations on dense tensors and differentiates scalar results.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn broadcast_at(v: &[f64], i: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> DiffError {
    DiffError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn check_index(op: &'static str, index: &[usize], size: usize) -> Result<()> {
    match index.iter().find(|&&i| i >= size) {
        Some(&i) => Err(DiffError::IndexOutOfRange { op, index: i, size }),
        None => Ok(()),
    }
}

/// Treats rank-1 tensors as a single row.
fn rows_cols(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [c] => Ok((1, *c)),
        [r, c] => Ok((*r, *c)),
        other => Err(DiffError::RankMismatch {
            expected: 2,
            shape: other.to_vec(),
        }),
    }
}

fn add_into(acc: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match acc {
        Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
        None => *acc = Some(g),
    }
}

/// Sums a gradient down to a broadcast scalar operand when needed.
fn reduce_to(g: Vec<f64>, len: usize) -> Vec<f64> {
    if len == 1 && g.len() != 1 {
        vec![g.iter().sum()]
    } else {
        g
    }
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

    /// Records a leaf; gradients are tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    /// Replaces the value of a leaf. Call [`Tape::replay`] afterwards to
    /// refresh downstream values.
    pub fn set_leaf(&mut self, v: Var, tensor: Tensor) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(DiffError::NotALeaf(v.0));
        }
        if node.value.shape() != tensor.shape() {
            return Err(mismatch("set_leaf", &node.value, &tensor));
        }
        let requires_grad = node.value.requires_grad();
        node.value = tensor.with_requires_grad(requires_grad);
        Ok(())
    }

    /// Re-evaluates every recorded operation from the current leaf values.
    /// Dropout masks recorded during the original pass are reused.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let value = self.eval(&self.nodes[i].op)?;
            self.nodes[i].value = value;
        }
        Ok(())
    }

    fn inputs(op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Binary { a, b, .. } | Op::MatMul { a, b } | Op::Select { a, b, .. } => vec![*a, *b],
            Op::AddBias { x, bias: y }
            | Op::HeadDot { x, att: y }
            | Op::HeadScale { x, weights: y }
            | Op::Propagate { x, weights: y, .. } => vec![*x, *y],
            Op::PowConst { x, .. }
            | Op::Log(x)
            | Op::Exp(x)
            | Op::Clamp { x, .. }
            | Op::MaxConst { x, .. }
            | Op::SoftmaxRows(x)
            | Op::ReluDropout { x, .. }
            | Op::LeakyRelu { x, .. }
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::SumRows(x)
            | Op::GatherRows { x, .. }
            | Op::ScatterAddRows { x, .. }
            | Op::SegmentSoftmax { x, .. } => vec![*x],
        }
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = self.eval(&op)?;
        let needs_grad = Self::inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn eval(&self, op: &Op) -> Result<Tensor> {
        let val = |v: &Var| &self.nodes[v.0].value;
        match op {
            Op::Leaf => unreachable!("leaves are never re-evaluated"),
            Op::Binary { kind, a, b } => {
                let (ta, tb) = (val(a), val(b));
                let shape = if ta.shape() == tb.shape() || tb.is_scalar() {
                    ta.shape().to_vec()
                } else if ta.is_scalar() {
                    tb.shape().to_vec()
                } else {
                    return Err(mismatch(kind.name(), ta, tb));
                };
                let n = numel(&shape);
                let (da, db) = (ta.data(), tb.data());
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let x = broadcast_at(da, i);
                    let y = broadcast_at(db, i);
                    out.push(match kind {
                        BinaryKind::Add => x + y,
                        BinaryKind::Sub => x - y,
                        BinaryKind::Mul => x * y,
                        BinaryKind::Div => {
                            if y == 0.0 {
                                return Err(DiffError::DivisionByZero { index: i });
                            }
                            x / y
                        }
                    });
                }
                Tensor::new(shape, out)
            }
            Op::PowConst { x, exponent } => {
                let t = val(x);
                let p = *exponent;
                let integral = p.fract() == 0.0;
                let mut out = Vec::with_capacity(t.len());
                for (index, &base) in t.data().iter().enumerate() {
                    if (base < 0.0 && !integral) || (base == 0.0 && p < 0.0) {
                        return Err(DiffError::InvalidPower {
                            index,
                            base,
                            exponent: p,
                        });
                    }
                    out.push(base.powf(p));
                }
                Tensor::new(t.shape().to_vec(), out)
            }
            Op::Log(x) => {
                let t = val(x);
                let mut out = Vec::with_capacity(t.len());
                for (index, &value) in t.data().iter().enumerate() {
                    if value <= 0.0 {
                        return Err(DiffError::NonPositiveLog { index, value });
                    }
                    out.push(value.ln());
                }
                Tensor::new(t.shape().to_vec(), out)
            }
            Op::Exp(x) => map(val(x), f64::exp),
            Op::Clamp { x, lo, hi } => map(val(x), |v| v.clamp(*lo, *hi)),
            Op::MaxConst { x, floor } => map(val(x), |v| v.max(*floor)),
            Op::MatMul { a, b } => {
                let (ta, tb) = (val(a), val(b));
                let (r, k) = ta.dims2()?;
                let (k2, c) = tb.dims2()?;
                if k != k2 {
                    return Err(mismatch("matmul", ta, tb));
                }
                let mut out = vec![0.0; r * c];
                gemm(r, k, c, ta.data(), (k, 1), tb.data(), (c, 1), &mut out);
                Tensor::new(vec![r, c], out)
            }
            Op::SoftmaxRows(x) => {
                let t = val(x);
                let (_, c) = rows_cols(t)?;
                let mut out = t.data().to_vec();
                if c > 0 {
                    for row in out.chunks_mut(c) {
                        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let mut s = 0.0;
                        for v in row.iter_mut() {
                            *v = (*v - m).exp();
                            s += *v;
                        }
                        row.iter_mut().for_each(|v| *v /= s);
                    }
                }
                Tensor::new(t.shape().to_vec(), out)
            }
            Op::ReluDropout { x, mask } => {
                let t = val(x);
                let out = match mask {
                    Some(m) => t.data().iter().zip(m).map(|(v, s)| v.max(0.0) * s).collect(),
                    None => t.data().iter().map(|v| v.max(0.0)).collect(),
                };
                Tensor::new(t.shape().to_vec(), out)
            }
            Op::LeakyRelu { x, slope } => map(val(x), |v| if v > 0.0 { v } else { slope * v }),
            Op::Sum(x) => Ok(Tensor::scalar(val(x).data().iter().sum())),
            Op::Mean(x) => {
                let t = val(x);
                if t.is_empty() {
                    return Err(DiffError::InvalidShape {
                        shape: t.shape().to_vec(),
                        len: 0,
                    });
                }
                Ok(Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64))
            }
            Op::SumRows(x) => {
                let t = val(x);
                let (r, c) = t.dims2()?;
                let out = (0..r).map(|i| t.data()[i * c..(i + 1) * c].iter().sum()).collect();
                Tensor::new(vec![r], out)
            }
            Op::AddBias { x, bias } => {
                let (t, b) = (val(x), val(bias));
                let (_, c) = t.dims2()?;
                if b.shape() != [c] {
                    return Err(mismatch("add_bias", t, b));
                }
                let mut out = t.data().to_vec();
                if c > 0 {
                    for row in out.chunks_mut(c) {
                        row.iter_mut().zip(b.data()).for_each(|(v, bb)| *v += bb);
                    }
                }
                Tensor::new(t.shape().to_vec(), out)
            }
            Op::GatherRows { x, index } => {
                let t = val(x);
                let (r, c) = t.dims2()?;
                check_index("gather_rows", index, r)?;
                let mut out = Vec::with_capacity(index.len() * c);
                for &i in index.iter() {
                    out.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
                }
                Tensor::new(vec![index.len(), c], out)
            }
            Op::ScatterAddRows { x, index, rows } => {
                let t = val(x);
                let (e, c) = t.dims2()?;
                if index.len() != e {
                    return Err(DiffError::ShapeMismatch {
                        op: "scatter_add_rows",
                        left: t.shape().to_vec(),
                        right: vec![index.len()],
                    });
                }
                check_index("scatter_add_rows", index, *rows)?;
                let mut out = vec![0.0; rows * c];
                for (src, &dst) in index.iter().enumerate() {
                    let from = &t.data()[src * c..(src + 1) * c];
                    out[dst * c..(dst + 1) * c]
                        .iter_mut()
                        .zip(from)
                        .for_each(|(o, v)| *o += v);
                }
                Tensor::new(vec![*rows, c], out)
            }
            Op::SegmentSoftmax { x, segments, count } => {
                let t = val(x);
                let (e, h) = t.dims2()?;
                if segments.len() != e {
                    return Err(DiffError::ShapeMismatch {
                        op: "segment_softmax",
                        left: t.shape().to_vec(),
                        right: vec![segments.len()],
                    });
                }
                check_index("segment_softmax", segments, *count)?;
                let d = t.data();
                let mut max = vec![f64::NEG_INFINITY; count * h];
                for (row, &s) in d.chunks_exact(h.max(1)).zip(segments.iter()) {
                    for (m, &v) in max[s * h..(s + 1) * h].iter_mut().zip(row) {
                        *m = m.max(v);
                    }
                }
                let mut out = vec![0.0; e * h];
                let mut sum = vec![0.0; count * h];
                for ((o, row), &s) in out
                    .chunks_exact_mut(h.max(1))
                    .zip(d.chunks_exact(h.max(1)))
                    .zip(segments.iter())
                {
                    let (m, acc) = (&max[s * h..(s + 1) * h], &mut sum[s * h..(s + 1) * h]);
                    for k in 0..h {
                        o[k] = (row[k] - m[k]).exp();
                        acc[k] += o[k];
                    }
                }
                for (o, &s) in out.chunks_exact_mut(h.max(1)).zip(segments.iter()) {
                    for (v, z) in o.iter_mut().zip(&sum[s * h..(s + 1) * h]) {
                        *v /= z;
                    }
                }
                Tensor::new(vec![e, h], out)
            }
            Op::HeadDot { x, att } => {
                let (t, a) = (val(x), val(att));
                let (n, width) = t.dims2()?;
                let (heads, f) = a.dims2()?;
                if heads * f != width {
                    return Err(mismatch("head_dot", t, a));
                }
                let mut out = vec![0.0; n * heads];
                for i in 0..n {
                    let row = &t.data()[i * width..(i + 1) * width];
                    for k in 0..heads {
                        out[i * heads + k] = row[k * f..(k + 1) * f]
                            .iter()
                            .zip(&a.data()[k * f..(k + 1) * f])
                            .map(|(p, q)| p * q)
                            .sum();
                    }
                }
                Tensor::new(vec![n, heads], out)
            }
            Op::HeadScale { x, weights } => {
                let (t, w) = (val(x), val(weights));
                let (e, width) = t.dims2()?;
                let (e2, heads) = w.dims2()?;
                if e != e2 || heads == 0 || width % heads != 0 {
                    return Err(mismatch("head_scale", t, w));
                }
                let f = width / heads;
                let mut out = t.data().to_vec();
                for i in 0..e {
                    for k in 0..heads {
                        let s = w.data()[i * heads + k];
                        out[i * width + k * f..i * width + (k + 1) * f]
                            .iter_mut()
                            .for_each(|v| *v *= s);
                    }
                }
                Tensor::new(vec![e, width], out)
            }
            Op::Propagate {
                x,
                weights,
                src,
                dst,
                rows,
            } => {
                let (t, w) = (val(x), val(weights));
                let (n, width) = t.dims2()?;
                let (e, heads) = w.dims2()?;
                if src.len() != e || dst.len() != e || heads == 0 || width % heads != 0 {
                    return Err(mismatch("propagate", t, w));
                }
                check_index("propagate", src, n)?;
                check_index("propagate", dst, *rows)?;
                let f = width / heads;
                let (xd, wd) = (t.data(), w.data());
                let mut out = vec![0.0; rows * width];
                for (k, (&s, &d)) in src.iter().zip(dst.iter()).enumerate() {
                    let from = &xd[s * width..(s + 1) * width];
                    let to = &mut out[d * width..(d + 1) * width];
                    for h in 0..heads {
                        let a = wd[k * heads + h];
                        to[h * f..(h + 1) * f]
                            .iter_mut()
                            .zip(&from[h * f..(h + 1) * f])
                            .for_each(|(o, v)| *o += a * v);
                    }
                }
                Tensor::new(vec![*rows, width], out)
            }
            Op::Select { mask, a, b } => {
                let (ta, tb) = (val(a), val(b));
                if ta.shape() != tb.shape() || mask.len() != ta.len() {
                    return Err(mismatch("select", ta, tb));
                }
                let out = mask
                    .iter()
                    .zip(ta.data().iter().zip(tb.data()))
                    .map(|(&m, (&x, &y))| if m { x } else { y })
                    .collect();
                Tensor::new(ta.shape().to_vec(), out)
            }
        }
    }

    // --- recording API -------------------------------------------------

    /// Dispatches an [`ElementwiseOp`]. Binary kinds require `b`; only
    /// scalar-to-tensor broadcasting is supported.
    pub fn elementwise(&mut self, kind: ElementwiseOp, a: Var, b: Option<Var>) -> Result<Var> {
        let need_b =
            |b: Option<Var>| b.ok_or_else(|| DiffError::InvalidHyperParameter(format!("{kind:?} needs two operands")));
        match kind {
            ElementwiseOp::Add => self.add(a, need_b(b)?),
            ElementwiseOp::Sub => self.sub(a, need_b(b)?),
            ElementwiseOp::Mul => self.mul(a, need_b(b)?),
            ElementwiseOp::Div => self.div(a, need_b(b)?),
            ElementwiseOp::PowConst(p) => self.pow_const(a, p),
            ElementwiseOp::Log => self.log(a),
            ElementwiseOp::Clamp { lo, hi } => self.clamp(a, lo, hi),
            ElementwiseOp::MaxConst(c) => self.max_const(a, c),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Binary {
            kind: BinaryKind::Add,
            a,
            b,
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Binary {
            kind: BinaryKind::Sub,
            a,
            b,
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Binary {
            kind: BinaryKind::Mul,
            a,
            b,
        })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Binary {
            kind: BinaryKind::Div,
            a,
            b,
        })
    }

    /// `c - x`, with `c` recorded as a constant.
    pub fn rsub_scalar(&mut self, c: f64, x: Var) -> Result<Var> {
        let c = self.scalar(c);
        self.sub(c, x)
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = self.scalar(c);
        self.mul(x, c)
    }

    pub fn pow_const(&mut self, x: Var, exponent: f64) -> Result<Var> {
        self.push(Op::PowConst { x, exponent })
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Exp(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(DiffError::InvalidHyperParameter(format!("clamp bounds {lo} > {hi}")));
        }
        self.push(Op::Clamp { x, lo, hi })
    }

    pub fn max_const(&mut self, x: Var, floor: f64) -> Result<Var> {
        self.push(Op::MaxConst { x, floor })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul { a, b })
    }

    /// Row-wise softmax with max subtraction. Rank-1 input is one row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.value(x).validate()?;
        self.push(Op::SoftmaxRows(x))
    }

    /// ReLU followed by inverted dropout. In eval mode (`training == false`)
    /// this is exactly `max(x, 0)`. The mask is drawn from a ChaCha stream
    /// seeded with `seed`.
    pub fn relu_dropout(&mut self, x: Var, p: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(DiffError::InvalidProbability(p));
        }
        let mask = (training && p > 0.0).then(|| {
            let mut rng = seeded(seed);
            let scale = 1.0 / (1.0 - p);
            (0..self.value(x).len())
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
                .collect()
        });
        self.push(Op::ReluDropout { x, mask })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::ReluDropout { x, mask: None })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.push(Op::LeakyRelu { x, slope })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Mean(x))
    }

    /// `r x c -> [r]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        self.push(Op::SumRows(x))
    }

    /// Adds a length-`c` bias to every row of an `r x c` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.push(Op::AddBias { x, bias })
    }

    /// `out[e] = x[index[e]]` row-wise.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        self.push(Op::GatherRows { x, index })
    }

    /// `out[index[e]] += x[e]` row-wise into `rows` output rows.
    pub fn scatter_add_rows(&mut self, x: Var, index: Arc<[usize]>, rows: usize) -> Result<Var> {
        self.push(Op::ScatterAddRows { x, index, rows })
    }

    /// Column-wise softmax over the rows sharing a segment id.
    pub fn segment_softmax(&mut self, x: Var, segments: Arc<[usize]>, count: usize) -> Result<Var> {
        self.push(Op::SegmentSoftmax { x, segments, count })
    }

    /// `x: n x (h*f)`, `att: h x f` -> `n x h`, dotting each head block
    /// with its attention vector.
    pub fn head_dot(&mut self, x: Var, att: Var) -> Result<Var> {
        self.push(Op::HeadDot { x, att })
    }

    /// `x: e x (h*f)`, `weights: e x h` -> scales each head block.
    pub fn head_scale(&mut self, x: Var, weights: Var) -> Result<Var> {
        self.push(Op::HeadScale { x, weights })
    }

    /// Weighted message passing without materializing per-edge messages:
    /// `out[dst[e]] += weights[e, k] * x[src[e]]` on head block `k`.
    /// Equivalent to `scatter_add_rows(head_scale(gather_rows(x, src),
    /// weights), dst, rows)`.
    pub fn propagate(
        &mut self,
        x: Var,
        weights: Var,
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
        rows: usize,
    ) -> Result<Var> {
        self.push(Op::Propagate {
            x,
            weights,
            src,
            dst,
            rows,
        })
    }

    /// Elementwise `mask ? a : b`.
    pub fn select(&mut self, mask: Vec<bool>, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Select { mask, a, b })
    }

    // --- backward --------------------------------------------------------

    /// Accumulates d(root)/d(leaf) into every gradient-tracking leaf.
    ///
    /// Leaf gradients add up across calls; use [`Tape::zero_grad`] to reset.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(DiffError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            for (input, grad) in self.local_grads(i, &g) {
                if self.nodes[input.0].needs_grad {
                    add_into(&mut adj[input.0], grad);
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let val = |v: &Var| &self.nodes[v.0].value;
        let out = &node.value;
        let want = |v: &Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::Binary { kind, a, b } => {
                let (da, db) = (val(a).data(), val(b).data());
                let n = g.len();
                let mut grads = Vec::with_capacity(2);
                if want(a) {
                    let ga: Vec<f64> = (0..n)
                        .map(|k| match kind {
                            BinaryKind::Add | BinaryKind::Sub => g[k],
                            BinaryKind::Mul => g[k] * broadcast_at(db, k),
                            BinaryKind::Div => g[k] / broadcast_at(db, k),
                        })
                        .collect();
                    grads.push((*a, reduce_to(ga, da.len())));
                }
                if want(b) {
                    let gb: Vec<f64> = (0..n)
                        .map(|k| match kind {
                            BinaryKind::Add => g[k],
                            BinaryKind::Sub => -g[k],
                            BinaryKind::Mul => g[k] * broadcast_at(da, k),
                            BinaryKind::Div => {
                                let y = broadcast_at(db, k);
                                -g[k] * broadcast_at(da, k) / (y * y)
                            }
                        })
                        .collect();
                    grads.push((*b, reduce_to(gb, db.len())));
                }
                grads
            }
            Op::PowConst { x, exponent } => {
                let p = *exponent;
                let gx = val(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gg)| {
                        if p == 0.0 || gg == 0.0 {
                            0.0
                        } else {
                            gg * p * v.powf(p - 1.0)
                        }
                    })
                    .collect();
                vec![(*x, gx)]
            }
            Op::Log(x) => {
                let gx = val(x).data().iter().zip(g).map(|(v, gg)| gg / v).collect();
                vec![(*x, gx)]
            }
            Op::Exp(x) => {
                let gx = out.data().iter().zip(g).map(|(y, gg)| gg * y).collect();
                vec![(*x, gx)]
            }
            Op::Clamp { x, lo, hi } => {
                let gx = val(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gg)| if v >= *lo && v <= *hi { gg } else { 0.0 })
                    .collect();
                vec![(*x, gx)]
            }
            Op::MaxConst { x, floor } => {
                let gx = val(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gg)| if v > *floor { gg } else { 0.0 })
                    .collect();
                vec![(*x, gx)]
            }
            Op::MatMul { a, b } => {
                let (ta, tb) = (val(a), val(b));
                let (r, k) = (ta.shape()[0], ta.shape()[1]);
                let c = tb.shape()[1];
                let mut grads = Vec::with_capacity(2);
                if want(a) {
                    // g (r x c) . b^T (c x k)
                    let mut ga = vec![0.0; r * k];
                    gemm(r, c, k, g, (c, 1), tb.data(), (1, c), &mut ga);
                    grads.push((*a, ga));
                }
                if want(b) {
                    // a^T (k x r) . g (r x c)
                    let mut gb = vec![0.0; k * c];
                    gemm(k, r, c, ta.data(), (1, k), g, (c, 1), &mut gb);
                    grads.push((*b, gb));
                }
                grads
            }
            Op::SoftmaxRows(x) => {
                let c = *out.shape().last().unwrap_or(&1);
                let mut gx = vec![0.0; g.len()];
                if c > 0 {
                    for ((y, gg), o) in out.data().chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)) {
                        let dot: f64 = y.iter().zip(gg).map(|(a, b)| a * b).sum();
                        for k in 0..c {
                            o[k] = y[k] * (gg[k] - dot);
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::ReluDropout { x, mask } => {
                let xd = val(x).data();
                let gx = (0..g.len())
                    .map(|k| {
                        if xd[k] > 0.0 {
                            g[k] * mask.as_ref().map_or(1.0, |m| m[k])
                        } else {
                            0.0
                        }
                    })
                    .collect();
                vec![(*x, gx)]
            }
            Op::LeakyRelu { x, slope } => {
                let gx = val(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gg)| if v > 0.0 { gg } else { slope * gg })
                    .collect();
                vec![(*x, gx)]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; val(x).len()])],
            Op::Mean(x) => {
                let n = val(x).len();
                vec![(*x, vec![g[0] / n as f64; n])]
            }
            Op::SumRows(x) => {
                let (r, c) = (val(x).shape()[0], val(x).shape()[1]);
                let mut gx = Vec::with_capacity(r * c);
                for gg in g.iter().take(r) {
                    gx.extend(std::iter::repeat_n(*gg, c));
                }
                vec![(*x, gx)]
            }
            Op::AddBias { x, bias } => {
                let c = val(bias).len();
                let mut grads = Vec::with_capacity(2);
                if want(x) {
                    grads.push((*x, g.to_vec()));
                }
                if want(bias) {
                    let mut gb = vec![0.0; c];
                    if c > 0 {
                        for row in g.chunks(c) {
                            gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                        }
                    }
                    grads.push((*bias, gb));
                }
                grads
            }
            Op::GatherRows { x, index } => {
                let (r, c) = (val(x).shape()[0], val(x).shape()[1]);
                let mut gx = vec![0.0; r * c];
                for (e, &src) in index.iter().enumerate() {
                    gx[src * c..(src + 1) * c]
                        .iter_mut()
                        .zip(&g[e * c..(e + 1) * c])
                        .for_each(|(o, v)| *o += v);
                }
                vec![(*x, gx)]
            }
            Op::ScatterAddRows { x, index, .. } => {
                let c = val(x).shape()[1];
                let mut gx = Vec::with_capacity(index.len() * c);
                for &dst in index.iter() {
                    gx.extend_from_slice(&g[dst * c..(dst + 1) * c]);
                }
                vec![(*x, gx)]
            }
            Op::SegmentSoftmax { x, segments, count } => {
                let h = out.shape()[1];
                let y = out.data();
                let mut dot = vec![0.0; count * h];
                for (i, &s) in segments.iter().enumerate() {
                    for k in 0..h {
                        dot[s * h + k] += y[i * h + k] * g[i * h + k];
                    }
                }
                let mut gx = vec![0.0; y.len()];
                for (i, &s) in segments.iter().enumerate() {
                    for k in 0..h {
                        gx[i * h + k] = y[i * h + k] * (g[i * h + k] - dot[s * h + k]);
                    }
                }
                vec![(*x, gx)]
            }
            Op::HeadDot { x, att } => {
                let (tx, ta) = (val(x), val(att));
                let (n, width) = (tx.shape()[0], tx.shape()[1]);
                let (heads, f) = (ta.shape()[0], ta.shape()[1]);
                let mut grads = Vec::with_capacity(2);
                if want(x) {
                    let mut gx = vec![0.0; n * width];
                    for i in 0..n {
                        for k in 0..heads {
                            let s = g[i * heads + k];
                            for j in 0..f {
                                gx[i * width + k * f + j] = s * ta.data()[k * f + j];
                            }
                        }
                    }
                    grads.push((*x, gx));
                }
                if want(att) {
                    let mut ga = vec![0.0; heads * f];
                    for i in 0..n {
                        for k in 0..heads {
                            let s = g[i * heads + k];
                            for j in 0..f {
                                ga[k * f + j] += s * tx.data()[i * width + k * f + j];
                            }
                        }
                    }
                    grads.push((*att, ga));
                }
                grads
            }
            Op::Propagate {
                x, weights, src, dst, ..
            } => {
                let (tx, tw) = (val(x), val(weights));
                let width = tx.shape()[1];
                let heads = tw.shape()[1];
                let f = width / heads;
                let (xd, wd) = (tx.data(), tw.data());
                let mut grads = Vec::with_capacity(2);
                if want(x) {
                    let mut gx = vec![0.0; xd.len()];
                    for (k, (&s, &d)) in src.iter().zip(dst.iter()).enumerate() {
                        let from = &g[d * width..(d + 1) * width];
                        let to = &mut gx[s * width..(s + 1) * width];
                        for h in 0..heads {
                            let a = wd[k * heads + h];
                            to[h * f..(h + 1) * f]
                                .iter_mut()
                                .zip(&from[h * f..(h + 1) * f])
                                .for_each(|(o, v)| *o += a * v);
                        }
                    }
                    grads.push((*x, gx));
                }
                if want(weights) {
                    let mut gw = vec![0.0; wd.len()];
                    for (k, (&s, &d)) in src.iter().zip(dst.iter()).enumerate() {
                        let gd = &g[d * width..(d + 1) * width];
                        let xs = &xd[s * width..(s + 1) * width];
                        for h in 0..heads {
                            gw[k * heads + h] = gd[h * f..(h + 1) * f]
                                .iter()
                                .zip(&xs[h * f..(h + 1) * f])
                                .map(|(p, q)| p * q)
                                .sum();
                        }
                    }
                    grads.push((*weights, gw));
                }
                grads
            }
            Op::HeadScale { x, weights } => {
                let (tx, tw) = (val(x), val(weights));
                let (e, width) = (tx.shape()[0], tx.shape()[1]);
                let heads = tw.shape()[1];
                let f = width / heads;
                let mut grads = Vec::with_capacity(2);
                if want(x) {
                    let mut gx = g.to_vec();
                    for i in 0..e {
                        for k in 0..heads {
                            let s = tw.data()[i * heads + k];
                            gx[i * width + k * f..i * width + (k + 1) * f]
                                .iter_mut()
                                .for_each(|v| *v *= s);
                        }
                    }
                    grads.push((*x, gx));
                }
                if want(weights) {
                    let mut gw = vec![0.0; e * heads];
                    for i in 0..e {
                        for k in 0..heads {
                            let lo = i * width + k * f;
                            gw[i * heads + k] = g[lo..lo + f]
                                .iter()
                                .zip(&tx.data()[lo..lo + f])
                                .map(|(p, q)| p * q)
                                .sum();
                        }
                    }
                    grads.push((*weights, gw));
                }
                grads
            }
            Op::Select { mask, a, b } => {
                let ga = mask.iter().zip(g).map(|(&m, &gg)| if m { gg } else { 0.0 }).collect();
                let gb = mask.iter().zip(g).map(|(&m, &gg)| if m { 0.0 } else { gg }).collect();
                vec![(*a, ga), (*b, gb)]
            }
        }
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
}

/// `out = a . b` for an `m x k` by `k x n` product; `(row, col)` strides
/// allow transposed operands without copying.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    out: &mut [f64],
) {
    debug_assert!(out.len() == m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.fill(0.0);
        return;
    }
    debug_assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    // SAFETY: the strides address only elements inside `a`, `b` and `out`
    // (checked above in debug builds; callers pass shapes validated by
    // `dims2`), and `out` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
