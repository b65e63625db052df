//! Tape-based reverse-mode autodiff over a fixed set of matrix primitives.
//!
//! Every value on a tape is a rank-2 matrix (scalars are `1×1`). Nodes are
//! appended in evaluation order, so walking the node list backwards is a
//! reverse topological order and each node is visited once.
//!
//! Parameters live in a [`ParamStore`]. [`Tape::with_params`] pushes them as
//! the first leaves, which makes `ParamId(i)` and the i-th tape node the same
//! thing.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::{matmul_raw, Shape, Tensor};

/// Clamp applied to probabilities inside the log-likelihood primitives.
pub const PROB_EPS: f64 = 1e-7;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Names must be unique; rank-1 tensors are stored as `1×n`.
    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        if t.shape().rank() == 3 {
            return Err(Error::InvalidShape {
                dims: t.dims().to_vec(),
                reason: format!("parameter {name} must be rank 1 or 2"),
            });
        }
        self.names.push(name);
        self.tensors.push(t.as_matrix());
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.ids()
            .map(move |id| (id, self.names[id.0].as_str(), &self.tensors[id.0]))
    }
}

/// Boolean admissibility pattern for [`Tape::masked_softmax`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            allowed: vec![false; rows * cols],
        }
    }

    pub fn all(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    pub fn allow(&mut self, r: usize, c: usize) {
        self.allowed[r * self.cols + c] = true;
    }

    pub fn is_allowed(&self, r: usize, c: usize) -> bool {
        self.allowed[r * self.cols + c]
    }

    pub fn row_count(&self, r: usize) -> usize {
        self.allowed[r * self.cols..(r + 1) * self.cols]
            .iter()
            .filter(|a| **a)
            .count()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Warning {
    /// Cosine similarity of a zero vector; the value fell back to 0.
    ZeroNormCosine,
    /// Keypoint coordinates outside `[0, 1]` were clamped.
    KeypointClamped,
}

/// Primitive kinds, used for diagnostics and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    AddRow,
    Scale,
    ScaleRows,
    ConcatRows,
    ConcatCols,
    GatherRows,
    Softmax,
    MaskedSoftmax,
    LayerNorm,
    MeanAll,
    SumAll,
    MeanRows,
    SumCols,
    Log,
    Exp,
    Sigmoid,
    Relu,
    Cosine,
    CosineMatrix,
    Diag,
    Bce,
    Nll,
}

impl std::str::FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use OpKind::*;
        Ok(match s.to_ascii_lowercase().as_str() {
            "matmul" => MatMul,
            "transpose" => Transpose,
            "add" => Add,
            "sub" => Sub,
            "mul" => Mul,
            "add_row" => AddRow,
            "scale" => Scale,
            "scale_rows" => ScaleRows,
            "concat_rows" => ConcatRows,
            "concat_cols" => ConcatCols,
            "gather_rows" => GatherRows,
            "softmax" => Softmax,
            "masked_softmax" => MaskedSoftmax,
            "layer_norm" => LayerNorm,
            "mean_all" => MeanAll,
            "sum_all" => SumAll,
            "mean_rows" => MeanRows,
            "sum_cols" => SumCols,
            "log" => Log,
            "exp" => Exp,
            "sigmoid" => Sigmoid,
            "relu" => Relu,
            "cosine" => Cosine,
            "cosine_matrix" => CosineMatrix,
            "diag" => Diag,
            "bce" => Bce,
            "nll" => Nll,
            other => return Err(Error::config(format!("unknown op kind {other}"))),
        })
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Vec<f64>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Softmax(Var),
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MeanAll(Var),
    SumAll(Var),
    MeanRows(Var),
    SumCols(Var),
    Log(Var),
    Exp(Var),
    Sigmoid(Var),
    Relu(Var),
    /// Norms of the operand rows; zero marks the fallback case.
    Cosine(Var, Var, f64, f64),
    CosineMatrix {
        a: Var,
        b: Var,
        norm_a: Vec<f64>,
        norm_b: Vec<f64>,
    },
    Diag(Var),
    Bce(Var, Vec<f64>),
    Nll(Var, Vec<usize>),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Scale(..) => OpKind::Scale,
            Op::ScaleRows(..) => OpKind::ScaleRows,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::Softmax(..) => OpKind::Softmax,
            Op::MaskedSoftmax(..) => OpKind::MaskedSoftmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::MeanAll(..) => OpKind::MeanAll,
            Op::SumAll(..) => OpKind::SumAll,
            Op::MeanRows(..) => OpKind::MeanRows,
            Op::SumCols(..) => OpKind::SumCols,
            Op::Log(..) => OpKind::Log,
            Op::Exp(..) => OpKind::Exp,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Relu(..) => OpKind::Relu,
            Op::Cosine(..) => OpKind::Cosine,
            Op::CosineMatrix { .. } => OpKind::CosineMatrix,
            Op::Diag(..) => OpKind::Diag,
            Op::Bce(..) => OpKind::Bce,
            Op::Nll(..) => OpKind::Nll,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    n_params: usize,
    warnings: Vec<Warning>,
    fault: Option<OpKind>,
}

/// Gradients from one backward pass, indexed by tape variable.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    /// Gradient of the output with respect to `v`, or `None` if `v` does not reach it.
    pub fn wrt(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[v.0], g.clone()))
    }

    /// Gradient for a parameter, zeros if it did not contribute.
    pub fn param(&self, id: ParamId) -> Cow<'_, [f64]> {
        match &self.grads[id.0] {
            Some(g) => Cow::Borrowed(g),
            None => Cow::Owned(vec![0.0; self.shapes[id.0].numel()]),
        }
    }
}

fn dim_err(op: &'static str, lhs: Shape, rhs: Shape) -> Error {
    Error::Dimension { op, lhs, rhs }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fresh tape whose first leaves are the store's parameters, in order.
    pub fn with_params(store: &ParamStore) -> Self {
        let mut tape = Tape::new();
        for t in &store.tensors {
            tape.nodes.push(Node {
                value: t.clone(),
                op: Op::Leaf,
                needs_grad: true,
            });
        }
        tape.n_params = store.len();
        tape
    }

    pub fn param(&self, id: ParamId) -> Var {
        assert!(
            id.0 < self.n_params,
            "parameter {} not bound on this tape",
            id.0
        );
        Var(id.0)
    }

    /// A tracked leaf (gradients are recorded for it).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, true)
    }

    /// An untracked input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, false)
    }

    fn push_leaf(&mut self, t: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t.as_matrix(),
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1×1` variable.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }

    pub(crate) fn warn(&mut self, w: Warning) {
        if !self.warnings.contains(&w) {
            log::warn!("{w:?}");
        }
        self.warnings.push(w);
    }

    /// Test hook: perturb the backward rule of one primitive kind by 1%.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn op_kinds(&self) -> Vec<OpKind> {
        self.nodes.iter().map(|n| n.op.kind()).collect()
    }

    fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn rc(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn push(
        &mut self,
        op_name: &'static str,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Tensor::from_parts(Shape::matrix(rows, cols), data),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.rc(a);
        let (k2, m) = self.rc(b);
        if k != k2 {
            return Err(dim_err("matmul", self.shape(a), self.shape(b)));
        }
        let data = matmul_raw(self.data(a), self.data(b), n, k, m);
        self.push("matmul", n, m, data, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.rc(a);
        let src = self.data(a);
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = src[i * m + j];
            }
        }
        self.push("transpose", m, n, data, Op::Transpose(a), &[a])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(self.rc(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = self.same_shape("add", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        self.push("add", n, m, data, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = self.same_shape("sub", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        self.push("sub", n, m, data, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = self.same_shape("mul", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        self.push("mul", n, m, data, Op::Mul(a, b), &[a, b])
    }

    /// `a[n×m] + row[1×m]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, m) = self.rc(a);
        if self.rc(row) != (1, m) {
            return Err(dim_err("add_row", self.shape(a), self.shape(row)));
        }
        let r = self.data(row);
        let data = self
            .data(a)
            .chunks_exact(m.max(1))
            .flat_map(|chunk| chunk.iter().zip(r).map(|(x, y)| x + y))
            .collect();
        self.push("add_row", n, m, data, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let (n, m) = self.rc(a);
        let data = self.data(a).iter().map(|x| c * x).collect();
        self.push("scale", n, m, data, Op::Scale(a, c), &[a])
    }

    /// Multiply row `r` by the constant `coeffs[r]`.
    pub fn scale_rows(&mut self, a: Var, coeffs: Vec<f64>) -> Result<Var> {
        let (n, m) = self.rc(a);
        if coeffs.len() != n {
            return Err(dim_err("scale_rows", self.shape(a), Shape::matrix(coeffs.len(), 1)));
        }
        let mut data = self.data(a).to_vec();
        for (r, c) in coeffs.iter().enumerate() {
            for x in &mut data[r * m..(r + 1) * m] {
                *x *= c;
            }
        }
        self.push("scale_rows", n, m, data, Op::ScaleRows(a, coeffs), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::InvalidShape {
            dims: vec![],
            reason: "concat_rows of nothing".into(),
        })?;
        let m = self.rc(first).1;
        let mut data = Vec::new();
        let mut n = 0;
        for &p in parts {
            let (pn, pm) = self.rc(p);
            if pm != m {
                return Err(dim_err("concat_rows", self.shape(first), self.shape(p)));
            }
            data.extend_from_slice(self.data(p));
            n += pn;
        }
        self.push("concat_rows", n, m, data, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::InvalidShape {
            dims: vec![],
            reason: "concat_cols of nothing".into(),
        })?;
        let n = self.rc(first).0;
        for &p in parts {
            if self.rc(p).0 != n {
                return Err(dim_err("concat_cols", self.shape(first), self.shape(p)));
            }
        }
        let m: usize = parts.iter().map(|&p| self.rc(p).1).sum();
        let mut data = Vec::with_capacity(n * m);
        for r in 0..n {
            for &p in parts {
                let pm = self.rc(p).1;
                data.extend_from_slice(&self.data(p)[r * pm..(r + 1) * pm]);
            }
        }
        self.push("concat_cols", n, m, data, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Select rows by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (n, m) = self.rc(a);
        let mut data = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            if i >= n {
                return Err(dim_err("gather_rows", self.shape(a), Shape::matrix(i + 1, m)));
            }
            data.extend_from_slice(&self.data(a)[i * m..(i + 1) * m]);
        }
        self.push("gather_rows", idx.len(), m, data, Op::GatherRows(a, idx.to_vec()), &[a])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.rc(a);
        let mut data = self.data(a).to_vec();
        for row in data.chunks_exact_mut(m.max(1)) {
            softmax_in_place(row, None);
        }
        self.push("softmax", n, m, data, Op::Softmax(a), &[a])
    }

    /// Row-wise softmax over admissible entries only; the rest get weight exactly 0.
    pub fn masked_softmax(&mut self, a: Var, mask: &Mask) -> Result<Var> {
        let (n, m) = self.rc(a);
        if (mask.rows, mask.cols) != (n, m) {
            return Err(dim_err("masked_softmax", self.shape(a), Shape::matrix(mask.rows, mask.cols)));
        }
        let mut data = self.data(a).to_vec();
        for (r, row) in data.chunks_exact_mut(m.max(1)).enumerate() {
            if mask.row_count(r) == 0 {
                return Err(Error::EmptyMaskRow { row: r });
            }
            softmax_in_place(row, Some(&mask.allowed[r * m..(r + 1) * m]));
        }
        self.push("masked_softmax", n, m, data, Op::MaskedSoftmax(a), &[a])
    }

    /// Per-row layer normalization with gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.rc(x);
        if self.rc(gain) != (1, m) || self.rc(bias) != (1, m) {
            return Err(dim_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        let src = self.data(x);
        let (g, b) = (self.data(gain), self.data(bias));
        let mut xhat = vec![0.0; n * m];
        let mut inv_std = vec![0.0; n];
        let mut data = vec![0.0; n * m];
        for r in 0..n {
            let row = &src[r * m..(r + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..m {
                let h = (row[c] - mean) * inv;
                xhat[r * m + c] = h;
                data[r * m + c] = g[c] * h + b[c];
            }
        }
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        };
        self.push("layer_norm", n, m, data, op, &[x, gain, bias])
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let d = self.data(a);
        let v = d.iter().sum::<f64>() / d.len().max(1) as f64;
        self.push("mean_all", 1, 1, vec![v], Op::MeanAll(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let v = self.data(a).iter().sum::<f64>();
        self.push("sum_all", 1, 1, vec![v], Op::SumAll(a), &[a])
    }

    /// Column means: `n×m → 1×m`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.rc(a);
        let mut data = vec![0.0; m];
        for row in self.data(a).chunks_exact(m.max(1)) {
            for (o, v) in data.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut data {
            *o /= n.max(1) as f64;
        }
        self.push("mean_rows", 1, m, data, Op::MeanRows(a), &[a])
    }

    /// Row sums: `n×m → n×1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.rc(a);
        let data = self
            .data(a)
            .chunks_exact(m.max(1))
            .map(|row| row.iter().sum())
            .collect();
        self.push("sum_cols", n, 1, data, Op::SumCols(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.rc(a);
        let data = self.data(a).iter().map(|x| x.ln()).collect();
        self.push("log", n, m, data, Op::Log(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.rc(a);
        let data = self.data(a).iter().map(|x| x.exp()).collect();
        self.push("exp", n, m, data, Op::Exp(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.rc(a);
        let data = self.data(a).iter().map(|&x| sigmoid(x)).collect();
        self.push("sigmoid", n, m, data, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.rc(a);
        let data = self.data(a).iter().map(|&x| x.max(0.0)).collect();
        self.push("relu", n, m, data, Op::Relu(a), &[a])
    }

    /// Cosine similarity of two equal-length vectors, as `1×1`.
    ///
    /// A zero-norm operand yields 0, a zero gradient and a [`Warning::ZeroNormCosine`].
    pub fn cosine(&mut self, u: Var, v: Var) -> Result<Var> {
        if self.shape(u).numel() != self.shape(v).numel() {
            return Err(dim_err("cosine", self.shape(u), self.shape(v)));
        }
        let (du, dv) = (self.data(u), self.data(v));
        let nu = norm(du);
        let nv = norm(dv);
        let c = if nu == 0.0 || nv == 0.0 {
            0.0
        } else {
            dot(du, dv) / (nu * nv)
        };
        if nu == 0.0 || nv == 0.0 {
            self.warn(Warning::ZeroNormCosine);
        }
        self.push("cosine", 1, 1, vec![c], Op::Cosine(u, v, nu, nv), &[u, v])
    }

    /// Pairwise cosine similarities of the rows: `a[n×d], b[m×d] → n×m`.
    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = self.rc(a);
        let (m, d2) = self.rc(b);
        if d != d2 {
            return Err(dim_err("cosine_matrix", self.shape(a), self.shape(b)));
        }
        let (da, db) = (self.data(a), self.data(b));
        let norm_a: Vec<f64> = da.chunks_exact(d.max(1)).map(norm).collect();
        let norm_b: Vec<f64> = db.chunks_exact(d.max(1)).map(norm).collect();
        let mut data = vec![0.0; n * m];
        let mut degenerate = false;
        for i in 0..n {
            for j in 0..m {
                if norm_a[i] == 0.0 || norm_b[j] == 0.0 {
                    degenerate = true;
                    continue;
                }
                data[i * m + j] =
                    dot(&da[i * d..(i + 1) * d], &db[j * d..(j + 1) * d]) / (norm_a[i] * norm_b[j]);
            }
        }
        if degenerate {
            self.warn(Warning::ZeroNormCosine);
        }
        let op = Op::CosineMatrix {
            a,
            b,
            norm_a,
            norm_b,
        };
        self.push("cosine_matrix", n, m, data, op, &[a, b])
    }

    /// Diagonal of a square matrix as a column `n×1`.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.rc(a);
        if n != m {
            return Err(dim_err("diag", self.shape(a), self.shape(a)));
        }
        let data = (0..n).map(|i| self.data(a)[i * n + i]).collect();
        self.push("diag", n, 1, data, Op::Diag(a), &[a])
    }

    /// Mean binary cross-entropy of probabilities against `{0,1}` targets.
    ///
    /// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]`; clamped entries pass no gradient.
    pub fn bce(&mut self, probs: Var, targets: &Tensor) -> Result<Var> {
        if self.shape(probs).numel() != targets.len() {
            return Err(dim_err("bce", self.shape(probs), targets.shape()));
        }
        if let Some(bad) = targets.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::InvalidTarget(format!("bce target {bad} not in {{0,1}}")));
        }
        let p = self.data(probs);
        let total: f64 = p
            .iter()
            .zip(targets.data())
            .map(|(&p, &y)| {
                let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let v = total / p.len().max(1) as f64;
        let op = Op::Bce(probs, targets.data().to_vec());
        self.push("bce", 1, 1, vec![v], op, &[probs])
    }

    /// Mean negative log-likelihood of row-wise class probabilities.
    pub fn nll(&mut self, probs: Var, targets: &[usize]) -> Result<Var> {
        let (n, m) = self.rc(probs);
        if targets.len() != n {
            return Err(dim_err("nll", self.shape(probs), Shape::matrix(targets.len(), 1)));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= m) {
            return Err(Error::InvalidTarget(format!("class {bad} out of range 0..{m}")));
        }
        let p = self.data(probs);
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -p[r * m + t].clamp(PROB_EPS, 1.0).ln())
            .sum();
        let v = total / n.max(1) as f64;
        self.push("nll", 1, 1, vec![v], Op::Nll(probs, targets.to_vec()), &[probs])
    }

    /// Reverse pass from a `1×1` output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.shape(out) != Shape::matrix(1, 1) {
            return Err(dim_err("backward", self.shape(out), Shape::matrix(1, 1)));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g_own) = grads[i].take() else {
                continue;
            };
            let g: Cow<[f64]> = if self.fault == Some(node.op.kind()) {
                Cow::Owned(g_own.iter().map(|x| x * 1.01).collect())
            } else {
                Cow::Borrowed(&g_own)
            };
            self.backward_node(node, &g, &mut grads)?;
            grads[i] = Some(g_own);
        }
        for g in grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let y = node.value.data();
        let (n, m) = (node.value.rows(), node.value.cols());
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (an, k) = self.rc(*a);
                if self.nodes[a.0].needs_grad {
                    // g[n×m] · bᵀ[m×k]
                    let bd = self.data(*b);
                    self.acc(grads, *a, |ga| {
                        for i in 0..an {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..m {
                                    s += g[i * m + j] * bd[p * m + j];
                                }
                                ga[i * k + p] += s;
                            }
                        }
                    });
                }
                if self.nodes[b.0].needs_grad {
                    // aᵀ[k×n] · g[n×m]
                    let ad = self.data(*a);
                    self.acc(grads, *b, |gb| {
                        for i in 0..an {
                            for p in 0..k {
                                let av = ad[i * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                for j in 0..m {
                                    gb[p * m + j] += av * g[i * m + j];
                                }
                            }
                        }
                    });
                }
            }
            Op::Transpose(a) => self.acc(grads, *a, |ga| {
                // node is n×m, input is m×n
                for i in 0..n {
                    for j in 0..m {
                        ga[j * n + i] += g[i * m + j];
                    }
                }
            }),
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| {
                    for (o, v) in gb.iter_mut().zip(g) {
                        *o -= v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                self.acc(grads, *a, |ga| {
                    for k in 0..ga.len() {
                        ga[k] += g[k] * bd[k];
                    }
                });
                self.acc(grads, *b, |gb| {
                    for k in 0..gb.len() {
                        gb[k] += g[k] * ad[k];
                    }
                });
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *row, |gr| {
                    for chunk in g.chunks_exact(m.max(1)) {
                        add_into(gr, chunk);
                    }
                });
            }
            Op::Scale(a, c) => self.acc(grads, *a, |ga| {
                for (o, v) in ga.iter_mut().zip(g) {
                    *o += c * v;
                }
            }),
            Op::ScaleRows(a, coeffs) => self.acc(grads, *a, |ga| {
                for (r, c) in coeffs.iter().enumerate() {
                    for j in 0..m {
                        ga[r * m + j] += c * g[r * m + j];
                    }
                }
            }),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.shape(*p).numel();
                    self.acc(grads, *p, |gp| add_into(gp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for p in parts {
                    let pm = self.rc(*p).1;
                    self.acc(grads, *p, |gp| {
                        for r in 0..n {
                            add_into(&mut gp[r * pm..(r + 1) * pm], &g[r * m + col..r * m + col + pm]);
                        }
                    });
                    col += pm;
                }
            }
            Op::GatherRows(a, idx) => self.acc(grads, *a, |ga| {
                for (r, &i) in idx.iter().enumerate() {
                    add_into(&mut ga[i * m..(i + 1) * m], &g[r * m..(r + 1) * m]);
                }
            }),
            Op::Softmax(a) | Op::MaskedSoftmax(a) => self.acc(grads, *a, |ga| {
                for r in 0..n {
                    let yr = &y[r * m..(r + 1) * m];
                    let gr = &g[r * m..(r + 1) * m];
                    let s = dot(yr, gr);
                    for j in 0..m {
                        ga[r * m + j] += yr[j] * (gr[j] - s);
                    }
                }
            }),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gd = self.data(*gain);
                self.acc(grads, *gain, |gg| {
                    for r in 0..n {
                        for c in 0..m {
                            gg[c] += g[r * m + c] * xhat[r * m + c];
                        }
                    }
                });
                self.acc(grads, *bias, |gb| {
                    for chunk in g.chunks_exact(m.max(1)) {
                        add_into(gb, chunk);
                    }
                });
                self.acc(grads, *x, |gx| {
                    let mf = m as f64;
                    for r in 0..n {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for c in 0..m {
                            let d = g[r * m + c] * gd[c];
                            sum_d += d;
                            sum_dx += d * xhat[r * m + c];
                        }
                        for c in 0..m {
                            let d = g[r * m + c] * gd[c];
                            gx[r * m + c] +=
                                inv_std[r] / mf * (mf * d - sum_d - xhat[r * m + c] * sum_dx);
                        }
                    }
                });
            }
            Op::MeanAll(a) => {
                let len = self.shape(*a).numel() as f64;
                self.acc(grads, *a, |ga| {
                    for o in ga.iter_mut() {
                        *o += g[0] / len;
                    }
                });
            }
            Op::SumAll(a) => self.acc(grads, *a, |ga| {
                for o in ga.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::MeanRows(a) => {
                let rows = self.rc(*a).0 as f64;
                self.acc(grads, *a, |ga| {
                    for chunk in ga.chunks_exact_mut(m.max(1)) {
                        for (o, v) in chunk.iter_mut().zip(g) {
                            *o += v / rows;
                        }
                    }
                });
            }
            Op::SumCols(a) => {
                let am = self.rc(*a).1;
                self.acc(grads, *a, |ga| {
                    for (r, chunk) in ga.chunks_exact_mut(am.max(1)).enumerate() {
                        for o in chunk {
                            *o += g[r];
                        }
                    }
                });
            }
            Op::Log(a) => {
                let ad = self.data(*a);
                self.acc(grads, *a, |ga| {
                    for k in 0..ga.len() {
                        ga[k] += g[k] / ad[k];
                    }
                });
            }
            Op::Exp(a) => self.acc(grads, *a, |ga| {
                for k in 0..ga.len() {
                    ga[k] += g[k] * y[k];
                }
            }),
            Op::Sigmoid(a) => self.acc(grads, *a, |ga| {
                for k in 0..ga.len() {
                    ga[k] += g[k] * y[k] * (1.0 - y[k]);
                }
            }),
            Op::Relu(a) => {
                let ad = self.data(*a);
                self.acc(grads, *a, |ga| {
                    for k in 0..ga.len() {
                        if ad[k] > 0.0 {
                            ga[k] += g[k];
                        }
                    }
                });
            }
            Op::Cosine(u, v, nu, nv) => {
                if *nu == 0.0 || *nv == 0.0 {
                    return Ok(());
                }
                let c = y[0];
                let (du, dv) = (self.data(*u), self.data(*v));
                self.acc(grads, *u, |gu| {
                    for k in 0..gu.len() {
                        gu[k] += g[0] * (dv[k] / (nu * nv) - c * du[k] / (nu * nu));
                    }
                });
                self.acc(grads, *v, |gv| {
                    for k in 0..gv.len() {
                        gv[k] += g[0] * (du[k] / (nu * nv) - c * dv[k] / (nv * nv));
                    }
                });
            }
            Op::CosineMatrix {
                a,
                b,
                norm_a,
                norm_b,
            } => {
                let d = self.rc(*a).1;
                let (da, db) = (self.data(*a), self.data(*b));
                self.acc(grads, *a, |ga| {
                    for i in 0..n {
                        if norm_a[i] == 0.0 {
                            continue;
                        }
                        for j in 0..m {
                            if norm_b[j] == 0.0 {
                                continue;
                            }
                            let (gij, c) = (g[i * m + j], y[i * m + j]);
                            let inv = 1.0 / (norm_a[i] * norm_b[j]);
                            let self_term = c / (norm_a[i] * norm_a[i]);
                            for k in 0..d {
                                ga[i * d + k] += gij * (db[j * d + k] * inv - self_term * da[i * d + k]);
                            }
                        }
                    }
                });
                self.acc(grads, *b, |gb| {
                    for j in 0..m {
                        if norm_b[j] == 0.0 {
                            continue;
                        }
                        for i in 0..n {
                            if norm_a[i] == 0.0 {
                                continue;
                            }
                            let (gij, c) = (g[i * m + j], y[i * m + j]);
                            let inv = 1.0 / (norm_a[i] * norm_b[j]);
                            let self_term = c / (norm_b[j] * norm_b[j]);
                            for k in 0..d {
                                gb[j * d + k] += gij * (da[i * d + k] * inv - self_term * db[j * d + k]);
                            }
                        }
                    }
                });
            }
            Op::Diag(a) => self.acc(grads, *a, |ga| {
                for i in 0..n {
                    ga[i * n + i] += g[i];
                }
            }),
            Op::Bce(p, targets) => {
                let pd = self.data(*p);
                let len = pd.len() as f64;
                self.acc(grads, *p, |gp| {
                    for k in 0..gp.len() {
                        let pk = pd[k];
                        if !(PROB_EPS..=1.0 - PROB_EPS).contains(&pk) {
                            continue;
                        }
                        let yk = targets[k];
                        gp[k] += g[0] * (-yk / pk + (1.0 - yk) / (1.0 - pk)) / len;
                    }
                });
            }
            Op::Nll(p, targets) => {
                let pd = self.data(*p);
                let pm = self.rc(*p).1;
                let rows = targets.len() as f64;
                self.acc(grads, *p, |gp| {
                    for (r, &t) in targets.iter().enumerate() {
                        let pk = pd[r * pm + t];
                        if pk < PROB_EPS {
                            continue;
                        }
                        gp[r * pm + t] += -g[0] / (pk * rows);
                    }
                });
            }
        }
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64], allowed: Option<&[bool]>) {
    let ok = |j: usize| allowed.is_none_or(|a| a[j]);
    let mut max = f64::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if ok(j) && v > max {
            max = v;
        }
    }
    let mut sum = 0.0;
    for (j, v) in row.iter_mut().enumerate() {
        if ok(j) {
            *v = (*v - max).exp();
            sum += *v;
        } else {
            *v = 0.0;
        }
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, v) in dst.iter_mut().zip(src) {
        *o += v;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, grad_check_with};
    use crate::rng::Rng;

    fn rand_matrix(rng: &mut Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
    }

    fn store(shapes: &[(usize, usize)], seed: u64) -> ParamStore {
        let mut rng = Rng::new(seed);
        let mut s = ParamStore::new();
        for (i, &(r, c)) in shapes.iter().enumerate() {
            s.add(format!("p{i}"), rand_matrix(&mut rng, r, c)).unwrap();
        }
        s
    }

    fn check(shapes: &[(usize, usize)], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
        let s = store(shapes, 11);
        let ids: Vec<ParamId> = s.ids().collect();
        let report = grad_check(&s, 1e-5, |t| {
            let vars: Vec<Var> = ids.iter().map(|&id| t.param(id)).collect();
            f(t, &vars)
        })
        .unwrap();
        assert!(report.max_rel_err() < 1e-6, "{:?}", report.worst());
    }

    #[test]
    fn linear_primitives() {
        check(&[(2, 3), (3, 4)], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            let y = t.mul(y, y)?;
            t.sum_all(y)
        });
        check(&[(2, 3), (2, 3), (1, 3)], |t, v| {
            let a = t.add(v[0], v[1])?;
            let b = t.sub(a, v[1])?;
            let b = t.mul(b, v[1])?;
            let c = t.add_row(b, v[2])?;
            let c = t.scale(c, -0.7)?;
            let c = t.scale_rows(c, vec![0.5, 2.0])?;
            let c = t.transpose(c)?;
            let c = t.mul(c, c)?;
            t.mean_all(c)
        });
    }

    #[test]
    fn shape_primitives() {
        check(&[(2, 3), (1, 3), (2, 2)], |t, v| {
            let r = t.concat_rows(&[v[0], v[1]])?;
            let g = t.gather_rows(r, &[2, 0, 0, 1])?;
            let c = t.concat_cols(&[v[2], v[2]])?;
            let sq = t.matmul(c, g)?;
            let sq = t.mul(sq, sq)?;
            let m = t.mean_rows(sq)?;
            let s = t.sum_cols(m)?;
            t.sum_all(s)
        });
        check(&[(3, 3)], |t, v| {
            let d = t.diag(v[0])?;
            let d = t.mul(d, d)?;
            t.sum_all(d)
        });
    }

    #[test]
    fn softmax_and_norm() {
        let w = Tensor::from_rows(&[&[0.3, -1.0, 2.0, 0.5], &[1.0, 1.0, -0.5, 0.2]]);
        check(&[(2, 4)], |t, v| {
            let s = t.softmax(v[0])?;
            let c = t.constant(w.clone());
            let p = t.mul(s, c)?;
            t.sum_all(p)
        });
        let mut mask = Mask::new(2, 4);
        mask.allow(0, 1);
        mask.allow(0, 3);
        mask.allow(1, 0);
        check(&[(2, 4)], |t, v| {
            let s = t.masked_softmax(v[0], &mask)?;
            let c = t.constant(w.clone());
            let p = t.mul(s, c)?;
            t.sum_all(p)
        });
        check(&[(3, 5), (1, 5), (1, 5)], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            let y2 = t.mul(y, y)?;
            let y3 = t.mul(y2, y)?;
            t.mean_all(y3)
        });
    }

    #[test]
    fn pointwise_primitives() {
        check(&[(2, 3)], |t, v| {
            let e = t.exp(v[0])?;
            let l = t.log(e)?;
            let s = t.sigmoid(l)?;
            let s2 = t.mul(s, e)?;
            t.sum_all(s2)
        });
        // relu away from the kink
        let mut s = ParamStore::new();
        s.add("x", Tensor::from_rows(&[&[0.5, -0.3, 1.2]])).unwrap();
        let r = grad_check(&s, 1e-5, |t| {
            let x = t.param(ParamId(0));
            let y = t.relu(x)?;
            let y = t.mul(y, y)?;
            t.sum_all(y)
        })
        .unwrap();
        assert!(r.max_rel_err() < 1e-8);
    }

    #[test]
    fn cosine_primitives() {
        check(&[(1, 4), (1, 4)], |t, v| {
            let c = t.cosine(v[0], v[1])?;
            let c = t.mul(c, c)?;
            t.sum_all(c)
        });
        check(&[(3, 4), (2, 4)], |t, v| {
            let c = t.cosine_matrix(v[0], v[1])?;
            let c = t.exp(c)?;
            t.sum_all(c)
        });
    }

    #[test]
    fn likelihood_primitives() {
        let y = Tensor::from_rows(&[&[1.0, 0.0, 1.0], &[0.0, 0.0, 1.0]]);
        check(&[(2, 3)], |t, v| {
            let p = t.sigmoid(v[0])?;
            t.bce(p, &y)
        });
        check(&[(2, 3)], |t, v| {
            let p = t.softmax(v[0])?;
            t.nll(p, &[2, 0])
        });
    }

    #[test]
    fn bce_and_nll_values() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::from_rows(&[&[0.9, 0.1]]));
        let l = t.bce(p, &Tensor::from_rows(&[&[1.0, 0.0]])).unwrap();
        assert!((t.scalar(l) - 0.1053605156578263).abs() < 1e-12);
        let p = t.constant(Tensor::from_rows(&[&[0.7, 0.2, 0.1]]));
        let l = t.nll(p, &[0]).unwrap();
        assert!((t.scalar(l) - 0.35667494393873245).abs() < 1e-12);
        assert!(matches!(t.nll(p, &[3]), Err(Error::InvalidTarget(_))));
        assert!(matches!(
            t.bce(p, &Tensor::from_rows(&[&[0.5, 0.0, 1.0]])),
            Err(Error::InvalidTarget(_))
        ));
    }

    #[test]
    fn zero_norm_cosine_warns_and_passes_no_gradient() {
        let mut s = ParamStore::new();
        let u = s.add("u", Tensor::from_rows(&[&[0.0, 0.0]])).unwrap();
        let v = s.add("v", Tensor::from_rows(&[&[1.0, 2.0]])).unwrap();
        let mut t = Tape::with_params(&s);
        let (pu, pv) = (t.param(u), t.param(v));
        let c = t.cosine(pu, pv).unwrap();
        assert_eq!(t.scalar(c), 0.0);
        assert_eq!(t.warnings(), &[Warning::ZeroNormCosine]);
        let g = t.backward(c).unwrap();
        assert!(g.param(u).iter().all(|x| *x == 0.0));
        assert!(g.param(v).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn masked_entries_get_exactly_zero_weight() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[&[100.0, 1.0, 2.0]]));
        let mut m = Mask::new(1, 3);
        m.allow(0, 1);
        m.allow(0, 2);
        let s = t.masked_softmax(a, &m).unwrap();
        assert_eq!(t.value(s).data()[0], 0.0);
        let sum: f64 = t.value(s).data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
        let empty = Mask::new(1, 3);
        assert!(matches!(t.masked_softmax(a, &empty), Err(Error::EmptyMaskRow { row: 0 })));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[&[0.0, 1.0]]));
        assert!(matches!(t.log(a), Err(Error::NonFinite { op: "log" })));
        let big = t.constant(Tensor::from_rows(&[&[1000.0]]));
        assert!(t.exp(big).is_err());
    }

    #[test]
    fn shape_errors_name_both_operands() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[&[1.0, 2.0]]));
        let b = t.constant(Tensor::from_rows(&[&[1.0, 2.0, 3.0]]));
        let e = t.add(a, b).unwrap_err().to_string();
        assert!(e.contains("[1, 2]") && e.contains("[1, 3]"), "{e}");
        assert!(t.matmul(a, b).is_err());
    }

    #[test]
    fn unused_params_get_zero_gradient() {
        let s = store(&[(1, 2), (1, 2)], 3);
        let mut t = Tape::with_params(&s);
        let x = t.param(ParamId(0));
        let y = t.sum_all(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(&*g.param(ParamId(1)), &[0.0, 0.0]);
        assert_eq!(&*g.param(ParamId(0)), &[1.0, 1.0]);
    }

    #[test]
    fn injected_fault_is_detected() {
        let s = store(&[(2, 3), (3, 2)], 5);
        let report = grad_check_with(
            &s,
            1e-5,
            |t| t.inject_fault(OpKind::MatMul),
            |t| {
                let y = t.matmul(t.param(ParamId(0)), t.param(ParamId(1)))?;
                let y = t.mul(y, y)?;
                t.sum_all(y)
            },
        )
        .unwrap();
        assert!(report.max_rel_err() > 1e-3);
    }
}
