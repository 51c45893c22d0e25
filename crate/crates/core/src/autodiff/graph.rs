use std::collections::BTreeMap;
use std::rc::Rc;

use super::param::{Gradients, ParamId, Parameter};
use crate::error::AutodiffError;
use crate::tensor::{self, Tensor};

type OpResult = Result<Var, AutodiffError>;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    AddBias { x: Var, bias: Var },
    SumRows(Var),
    BroadcastRows(Var),
    SumCols(Var),
    BroadcastCols(Var),
    Concat { a: Var, b: Var },
    SliceCols { x: Var, start: usize },
    PadCols { x: Var, start: usize },
    LeakyRelu { x: Var, slope: f64 },
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Expand(Var),
    Square(Var),
    Sqrt(Var),
    Log(Var),
    Exp(Var),
    Recip(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    SoftmaxCrossEntropy { logits: Var, targets: Rc<[usize]> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul { .. } => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::SumRows(_) => "sum_rows",
            Op::BroadcastRows(_) => "broadcast_rows",
            Op::SumCols(_) => "sum_cols",
            Op::BroadcastCols(_) => "broadcast_cols",
            Op::Concat { .. } => "concat",
            Op::SliceCols { .. } => "slice_cols",
            Op::PadCols { .. } => "pad_cols",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Sum(_) => "sum",
            Op::Expand(_) => "expand",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Log(_) => "log",
            Op::Exp(_) => "exp",
            Op::Recip(_) => "recip",
            Op::Clamp { .. } => "clamp",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// A define-by-run computation graph.
///
/// Nodes are appended in evaluation order, so the arena order is a
/// topological order. [`Graph::grad`] appends the adjoint computation to the
/// same arena; with `create_graph` set those adjoint nodes are themselves
/// differentiable, which is what the gradient penalty needs.
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
    // Cleared while building a first-order backward pass so that adjoint
    // nodes never require gradients.
    record: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            record: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of `v`, failing if it is not finite.
    pub fn scalar(&self, v: Var) -> Result<f64, AutodiffError> {
        let t = self.value(v);
        let x = t.item();
        if !x.is_finite() {
            return Err(AutodiffError::NonFinite {
                op: self.nodes[v.0].op.name(),
            });
        }
        Ok(x)
    }

    /// Ids of every parameter bound as trainable in this graph.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.params.keys().copied().collect()
    }

    fn push(&mut self, op: Op, value: Tensor, parents_require_grad: bool) -> Var {
        let requires_grad = self.record && parents_require_grad;
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A constant input; gradients never flow into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: t,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input that is not a parameter (e.g. the interpolate
    /// whose input-gradient is penalized).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: t,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a trainable parameter. Binding the same id twice returns the
    /// same node so that shared weights accumulate into one gradient.
    pub fn param(&mut self, p: &Parameter) -> Var {
        if let Some(&v) = self.params.get(&p.id()) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param,
            value: p.value.clone(),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(p.id(), v);
        v
    }

    // ---- forward ops ---------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> OpResult {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) * op(b)` where `ta`/`tb` select transposition.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> OpResult {
        let value = tensor::matmul(self.value(a), self.value(b), ta, tb)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul { a, b, ta, tb }, value, rg))
    }

    /// Adds a length-`c` bias to every row of an `r x c` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> OpResult {
        let (xs, bs) = (self.shape(x), self.shape(bias));
        if xs.len() != 2 || bs.len() != 1 || xs[1] != bs[0] {
            return Err(shape_err("add_bias", format!("{xs:?} + {bs:?}")));
        }
        let c = xs[1];
        let b = self.value(bias).data().to_vec();
        let mut value = self.value(x).clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += b[i % c];
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Op::AddBias { x, bias }, value, rg))
    }

    /// Sums an `r x c` matrix over rows, giving a length-`c` vector.
    pub fn sum_rows(&mut self, x: Var) -> OpResult {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(shape_err("sum_rows", format!("{:?}", t.shape())));
        }
        let c = t.cols();
        let mut out = vec![0.0; c];
        for r in 0..t.rows() {
            for (o, v) in out.iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Op::SumRows(x), Tensor::vector(out), rg))
    }

    pub fn mean_rows(&mut self, x: Var) -> OpResult {
        let rows = self.value(x).rows();
        let s = self.sum_rows(x)?;
        self.scale(s, 1.0 / rows as f64)
    }

    /// Repeats a length-`c` vector as `rows` rows.
    pub fn broadcast_rows(&mut self, v: Var, rows: usize) -> OpResult {
        let t = self.value(v);
        if t.rank() != 1 {
            return Err(shape_err("broadcast_rows", format!("{:?}", t.shape())));
        }
        let c = t.len();
        let mut data = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            data.extend_from_slice(t.data());
        }
        let value = Tensor::matrix(rows, c, data)?;
        let rg = self.rg(v);
        Ok(self.push(Op::BroadcastRows(v), value, rg))
    }

    /// Sums an `r x c` matrix over columns, giving an `r x 1` matrix.
    pub fn sum_cols(&mut self, x: Var) -> OpResult {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(shape_err("sum_cols", format!("{:?}", t.shape())));
        }
        let out: Vec<f64> = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let value = Tensor::matrix(t.rows(), 1, out)?;
        let rg = self.rg(x);
        Ok(self.push(Op::SumCols(x), value, rg))
    }

    /// Repeats an `r x 1` column `cols` times.
    pub fn broadcast_cols(&mut self, x: Var, cols: usize) -> OpResult {
        let t = self.value(x);
        if t.rank() != 2 || t.cols() != 1 {
            return Err(shape_err("broadcast_cols", format!("{:?}", t.shape())));
        }
        let r = t.rows();
        let mut data = Vec::with_capacity(r * cols);
        for i in 0..r {
            data.extend(std::iter::repeat_n(t.data()[i], cols));
        }
        let value = Tensor::matrix(r, cols, data)?;
        let rg = self.rg(x);
        Ok(self.push(Op::BroadcastCols(x), value, rg))
    }

    /// Concatenates two matrices along the last dimension.
    pub fn concat(&mut self, a: Var, b: Var) -> OpResult {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.rows() != tb.rows() {
            return Err(shape_err(
                "concat",
                format!("{:?} ++ {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (r, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
        }
        let value = Tensor::matrix(r, ca + cb, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Concat { a, b }, value, rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> OpResult {
        let t = self.value(x);
        if t.rank() != 2 || start > end || end > t.cols() {
            return Err(shape_err(
                "slice_cols",
                format!("{:?}[.., {start}..{end}]", t.shape()),
            ));
        }
        let r = t.rows();
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[start..end]);
        }
        let value = Tensor::matrix(r, end - start, data)?;
        let rg = self.rg(x);
        Ok(self.push(Op::SliceCols { x, start }, value, rg))
    }

    /// Embeds a matrix at column offset `start` of a zero matrix `total` wide.
    pub fn pad_cols(&mut self, x: Var, start: usize, total: usize) -> OpResult {
        let t = self.value(x);
        if t.rank() != 2 || start + t.cols() > total {
            return Err(shape_err(
                "pad_cols",
                format!("{:?} at {start} within {total}", t.shape()),
            ));
        }
        let (r, c) = (t.rows(), t.cols());
        let mut data = vec![0.0; r * total];
        for i in 0..r {
            data[i * total + start..i * total + start + c].copy_from_slice(t.row(i));
        }
        let value = Tensor::matrix(r, total, data)?;
        let rg = self.rg(x);
        Ok(self.push(Op::PadCols { x, start }, value, rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> OpResult {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(x);
        Ok(self.push(Op::LeakyRelu { x, slope }, value, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> OpResult {
        let value = self.value(x).map(|v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        });
        let rg = self.rg(x);
        Ok(self.push(Op::Sigmoid(x), value, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> OpResult {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> OpResult {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub(a, b), value, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> OpResult {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> OpResult {
        let value = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        Ok(self.push(Op::Scale(x, s), value, rg))
    }

    pub fn neg(&mut self, x: Var) -> OpResult {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> OpResult {
        let value = self.value(x).map(|v| v + s);
        let rg = self.rg(x);
        Ok(self.push(Op::AddScalar(x), value, rg))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> OpResult {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        Ok(self.push(Op::Sum(x), value, rg))
    }

    /// Mean of all entries, as a scalar. Over a `b x 1` critic output this is
    /// the batch mean.
    pub fn mean(&mut self, x: Var) -> OpResult {
        let n = self.value(x).len();
        if n == 0 {
            return Err(shape_err("mean", "empty tensor".into()));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Broadcasts a scalar to `shape`.
    pub fn expand(&mut self, s: Var, shape: &[usize]) -> OpResult {
        let t = self.value(s);
        if t.len() != 1 {
            return Err(shape_err("expand", format!("{:?} -> {shape:?}", t.shape())));
        }
        let value = Tensor::full(shape, t.item());
        let rg = self.rg(s);
        Ok(self.push(Op::Expand(s), value, rg))
    }

    pub fn square(&mut self, x: Var) -> OpResult {
        let value = self.value(x).map(|v| v * v);
        let rg = self.rg(x);
        Ok(self.push(Op::Square(x), value, rg))
    }

    pub fn sqrt(&mut self, x: Var) -> OpResult {
        let value = self.value(x).map(f64::sqrt);
        let rg = self.rg(x);
        Ok(self.push(Op::Sqrt(x), value, rg))
    }

    pub fn log(&mut self, x: Var) -> OpResult {
        let value = self.value(x).map(f64::ln);
        let rg = self.rg(x);
        Ok(self.push(Op::Log(x), value, rg))
    }

    pub fn exp(&mut self, x: Var) -> OpResult {
        let value = self.value(x).map(f64::exp);
        let rg = self.rg(x);
        Ok(self.push(Op::Exp(x), value, rg))
    }

    /// Elementwise `1/x`, defined as 0 at `x == 0`. The zero convention makes
    /// the derivative of a norm vanish at the origin instead of producing NaN.
    pub fn recip(&mut self, x: Var) -> OpResult {
        let value = self.value(x).map(safe_recip);
        let rg = self.rg(x);
        Ok(self.push(Op::Recip(x), value, rg))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> OpResult {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.rg(x);
        Ok(self.push(Op::Clamp { x, lo, hi }, value, rg))
    }

    /// Euclidean norm of each row of a matrix, as an `r x 1` matrix.
    pub fn row_l2_norm(&mut self, x: Var) -> OpResult {
        let sq = self.square(x)?;
        let s = self.sum_cols(sq)?;
        self.sqrt(s)
    }

    /// Mean softmax cross-entropy of `logits` (`n x k`) against class indices.
    ///
    /// The backward rule is fused and first-order only; asking for a
    /// differentiable gradient through it fails with
    /// [`AutodiffError::UnsupportedDoubleBackward`].
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> OpResult {
        let t = self.value(logits);
        if t.rank() != 2 || t.rows() != targets.len() || t.rows() == 0 {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("logits {:?} vs {} targets", t.shape(), targets.len()),
            ));
        }
        let k = t.cols();
        if let Some(&bad) = targets.iter().find(|&&y| y >= k) {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("target {bad} outside {k} classes"),
            ));
        }
        let mut total = 0.0;
        for (r, &y) in targets.iter().enumerate() {
            let row = t.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let value = Tensor::scalar(total / targets.len() as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.into(),
            },
            value,
            rg,
        ))
    }

    // ---- reverse mode --------------------------------------------------

    /// Gradients of the scalar `root` with respect to `wrt`.
    ///
    /// With `create_graph` the returned gradients are differentiable nodes
    /// whose own backward pass yields second-order terms. Variables the root
    /// does not depend on get a zero constant.
    pub fn grad(
        &mut self,
        root: Var,
        wrt: &[Var],
        create_graph: bool,
    ) -> Result<Vec<Var>, AutodiffError> {
        let root_shape = self.shape(root).to_vec();
        if self.value(root).len() != 1 {
            return Err(AutodiffError::NonScalarRoot { shape: root_shape });
        }
        if !self.value(root).is_finite() {
            return Err(AutodiffError::NonFinite {
                op: self.nodes[root.0].op.name(),
            });
        }
        if wrt.iter().any(|&w| !self.rg(w)) {
            return Err(AutodiffError::NotDifferentiable);
        }
        let saved = self.record;
        self.record = create_graph;
        let result = self.backprop(root, wrt);
        self.record = saved;
        result
    }

    fn backprop(&mut self, root: Var, wrt: &[Var]) -> Result<Vec<Var>, AutodiffError> {
        let mut adjoint: Vec<Option<Var>> = vec![None; root.0 + 1];
        let seed = self.constant(Tensor::full(self.shape(root), 1.0));
        adjoint[root.0] = Some(seed);

        for i in (0..=root.0).rev() {
            let Some(g) = adjoint[i] else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let out = Var(i);
            for (parent, contrib) in self.vjp(&op, out, g)? {
                if !self.rg(parent) {
                    continue;
                }
                adjoint[parent.0] = Some(match adjoint[parent.0] {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib)?,
                });
            }
        }

        wrt.iter()
            .map(|&w| match adjoint.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => Ok(self.constant(Tensor::zeros(self.shape(w)))),
            })
            .collect()
    }

    /// Vector-Jacobian products of `op` (producing `out`) given its adjoint
    /// `g`, expressed as graph ops so they can be differentiated again.
    fn vjp(&mut self, op: &Op, out: Var, g: Var) -> Result<Vec<(Var, Var)>, AutodiffError> {
        let contribs = match *op {
            Op::Leaf | Op::Param => vec![],
            Op::MatMul { a, b, ta, tb } => {
                let mut v = Vec::with_capacity(2);
                if self.rg(a) {
                    let da = if ta {
                        self.matmul_t(b, g, tb, true)?
                    } else {
                        self.matmul_t(g, b, false, !tb)?
                    };
                    v.push((a, da));
                }
                if self.rg(b) {
                    let db = if tb {
                        self.matmul_t(g, a, true, ta)?
                    } else {
                        self.matmul_t(a, g, !ta, false)?
                    };
                    v.push((b, db));
                }
                v
            }
            Op::AddBias { x, bias } => {
                let db = self.sum_rows(g)?;
                vec![(x, g), (bias, db)]
            }
            Op::SumRows(x) => {
                let rows = self.value(x).rows();
                vec![(x, self.broadcast_rows(g, rows)?)]
            }
            Op::BroadcastRows(v) => vec![(v, self.sum_rows(g)?)],
            Op::SumCols(x) => {
                let cols = self.value(x).cols();
                vec![(x, self.broadcast_cols(g, cols)?)]
            }
            Op::BroadcastCols(x) => vec![(x, self.sum_cols(g)?)],
            Op::Concat { a, b } => {
                let ca = self.value(a).cols();
                let cb = self.value(b).cols();
                let da = self.slice_cols(g, 0, ca)?;
                let db = self.slice_cols(g, ca, ca + cb)?;
                vec![(a, da), (b, db)]
            }
            Op::SliceCols { x, start } => {
                let width = self.value(out).cols();
                let total = self.value(x).cols();
                debug_assert!(start + width <= total);
                vec![(x, self.pad_cols(g, start, total)?)]
            }
            Op::PadCols { x, start } => {
                let width = self.value(x).cols();
                vec![(x, self.slice_cols(g, start, start + width)?)]
            }
            Op::LeakyRelu { x, slope } => {
                // Kink at 0 takes the negative-branch slope.
                let mask = self.value(x).map(|v| if v > 0.0 { 1.0 } else { slope });
                let m = self.constant(mask);
                vec![(x, self.mul(g, m)?)]
            }
            Op::Sigmoid(x) => {
                let neg = self.scale(out, -1.0)?;
                let one_minus = self.add_scalar(neg, 1.0)?;
                let dsig = self.mul(out, one_minus)?;
                vec![(x, self.mul(g, dsig)?)]
            }
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => {
                let nb = self.scale(g, -1.0)?;
                vec![(a, g), (b, nb)]
            }
            Op::Mul(a, b) => {
                let mut v = Vec::with_capacity(2);
                if self.rg(a) {
                    v.push((a, self.mul(g, b)?));
                }
                if self.rg(b) {
                    v.push((b, self.mul(g, a)?));
                }
                v
            }
            Op::Scale(x, s) => vec![(x, self.scale(g, s)?)],
            Op::AddScalar(x) => vec![(x, g)],
            Op::Sum(x) => {
                let shape = self.shape(x).to_vec();
                vec![(x, self.expand(g, &shape)?)]
            }
            Op::Expand(s) => vec![(s, self.sum(g)?)],
            Op::Square(x) => {
                let two_x = self.scale(x, 2.0)?;
                vec![(x, self.mul(g, two_x)?)]
            }
            Op::Sqrt(x) => {
                let r = self.recip(out)?;
                let half_r = self.scale(r, 0.5)?;
                vec![(x, self.mul(g, half_r)?)]
            }
            Op::Log(x) => {
                let r = self.recip(x)?;
                vec![(x, self.mul(g, r)?)]
            }
            Op::Exp(x) => vec![(x, self.mul(g, out)?)],
            Op::Recip(x) => {
                let sq = self.square(out)?;
                let nsq = self.scale(sq, -1.0)?;
                vec![(x, self.mul(g, nsq)?)]
            }
            Op::Clamp { x, lo, hi } => {
                let mask = self
                    .value(x)
                    .map(|v| if (lo..=hi).contains(&v) { 1.0 } else { 0.0 });
                let m = self.constant(mask);
                vec![(x, self.mul(g, m)?)]
            }
            Op::SoftmaxCrossEntropy {
                logits,
                ref targets,
            } => {
                if self.record {
                    return Err(AutodiffError::UnsupportedDoubleBackward {
                        op: "softmax_cross_entropy",
                    });
                }
                let t = self.value(logits);
                let n = t.rows() as f64;
                let mut d = t.clone();
                let k = t.cols();
                for (r, &y) in targets.iter().enumerate() {
                    let row = &mut d.data_mut()[r * k..(r + 1) * k];
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - m).exp();
                        z += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= z * n;
                    }
                    row[y] -= 1.0 / n;
                }
                let dl = self.constant(d);
                let shape = self.shape(logits).to_vec();
                let gexp = self.expand(g, &shape)?;
                vec![(logits, self.mul(gexp, dl)?)]
            }
        };
        Ok(contribs)
    }

    /// First-order gradients of `root` for every bound parameter.
    pub fn backward(&mut self, root: Var) -> Result<Gradients, AutodiffError> {
        let ids: Vec<(ParamId, Var)> = self.params.iter().map(|(&k, &v)| (k, v)).collect();
        let vars: Vec<Var> = ids.iter().map(|&(_, v)| v).collect();
        let reached = self.reachable(root);
        let grads = self.grad(root, &vars, false)?;
        let mut out = Gradients::default();
        for ((id, var), g) in ids.into_iter().zip(grads) {
            if !reached[var.0] {
                continue;
            }
            let t = self.value(g).clone();
            if !t.is_finite() {
                return Err(AutodiffError::NonFinite { op: "backward" });
            }
            out.insert(id, t);
        }
        Ok(out)
    }

    fn reachable(&self, root: Var) -> Vec<bool> {
        let mut seen = vec![false; root.0 + 1];
        seen[root.0] = true;
        for i in (0..=root.0).rev() {
            if !seen[i] || !self.nodes[i].requires_grad {
                continue;
            }
            for p in parents(&self.nodes[i].op) {
                seen[p.0] = true;
            }
        }
        seen
    }
}

fn parents(op: &Op) -> Vec<Var> {
    match *op {
        Op::Leaf | Op::Param => vec![],
        Op::MatMul { a, b, .. } | Op::Concat { a, b } | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            vec![a, b]
        }
        Op::AddBias { x, bias } => vec![x, bias],
        Op::SumRows(x)
        | Op::SumCols(x)
        | Op::Sigmoid(x)
        | Op::Scale(x, _)
        | Op::AddScalar(x)
        | Op::Sum(x)
        | Op::Expand(x)
        | Op::Square(x)
        | Op::Sqrt(x)
        | Op::Log(x)
        | Op::Exp(x)
        | Op::Recip(x) => vec![x],
        Op::BroadcastRows(v) => vec![v],
        Op::BroadcastCols(x)
        | Op::SliceCols { x, .. }
        | Op::PadCols { x, .. }
        | Op::LeakyRelu { x, .. }
        | Op::Clamp { x, .. } => vec![x],
        Op::SoftmaxCrossEntropy { logits, .. } => vec![logits],
    }
}

fn safe_recip(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        1.0 / v
    }
}
