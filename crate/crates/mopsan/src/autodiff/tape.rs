//! The tape: eager op recording, value storage, and reverse-mode backward.

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, Axis};
use thiserror::Error;

/// Dense row-major matrix of `f64`; the only tensor type in the crate.
pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`]. Only valid for the tape that issued it.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct NodeId(pub usize);

/// Handle to a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct ParamId(pub usize);

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("{op}: shape mismatch at node {node}: left {lhs:?} vs right {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        node: usize,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: node {node} expects {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        node: usize,
        expected: &'static str,
        got: (usize, usize),
    },
    #[error("node handle {node} is not bound on this tape (tape has {len} nodes)")]
    UnboundNode { node: usize, len: usize },
    #[error("backward target node {node} has shape {shape:?}, expected a 1x1 scalar")]
    NonScalarLoss { node: usize, shape: (usize, usize) },
    #[error("parameter node {node} belongs to a different parameter set")]
    ForeignParam { node: usize },
    #[error("{op}: empty input list")]
    EmptyInput { op: &'static str },
    #[error("{op}: row index {index} out of range for {rows} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        rows: usize,
    },
    #[error("{op}: matrix at node {node} is not positive definite")]
    NotPositiveDefinite { op: &'static str, node: usize },
    #[error("{op}: row {row} of node {node} has near-zero norm")]
    ZeroRowNorm {
        op: &'static str,
        row: usize,
        node: usize,
    },
    #[error("parameter name {name:?} is already taken")]
    DuplicateParam { name: String },
}

static NEXT_SET_TOKEN: AtomicU64 = AtomicU64::new(1);

struct ParamEntry {
    name: String,
    value: Rc<Mat>,
    grad: Mat,
}

/// Named, ordered collection of trainable matrices with gradient buffers.
///
/// Values are reference-counted so tapes can hold them without copying;
/// in-place updates go through copy-on-write and never disturb a clone taken
/// earlier (clones are cheap snapshots).
pub struct ParamSet {
    token: u64,
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl Clone for ParamSet {
    fn clone(&self) -> Self {
        ParamSet {
            token: NEXT_SET_TOKEN.fetch_add(1, Ordering::Relaxed),
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: Rc::clone(&e.value),
                    grad: e.grad.clone(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            token: NEXT_SET_TOKEN.fetch_add(1, Ordering::Relaxed),
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a parameter. Names must be unique within the set.
    pub fn add(&mut self, name: &str, value: Mat) -> Result<ParamId, TapeError> {
        if self.index.contains_key(name) {
            return Err(TapeError::DuplicateParam {
                name: name.to_string(),
            });
        }
        let id = ParamId(self.entries.len());
        let grad = Mat::zeros(value.raw_dim());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value: Rc::new(value),
            grad,
        });
        self.index.insert(name.to_string(), id.0);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Mat {
        &self.entries[id.0].grad
    }

    /// Mutable access to a value; triggers copy-on-write if a clone shares it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        Rc::make_mut(&mut self.entries[id.0].value)
    }

    /// Replaces a value outright. The new matrix must keep the shape.
    pub fn set_value(&mut self, id: ParamId, value: Mat) {
        assert_eq!(
            self.entries[id.0].value.raw_dim(),
            value.raw_dim(),
            "parameter {} must keep its shape",
            self.entries[id.0].name
        );
        self.entries[id.0].value = Rc::new(value);
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Parameters whose name starts with `prefix`, in registration order.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].name.starts_with(prefix))
            .map(ParamId)
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, delta: &Mat) {
        self.entries[id.0].grad += delta;
    }

    /// Scales every gradient buffer, used to average accumulated minibatches.
    pub fn scale_grads(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.grad *= factor;
        }
    }

    pub fn global_grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.grad.iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Total number of scalar parameters across `ids`.
    pub fn flat_len(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|id| self.entries[id.0].value.len()).sum()
    }

    /// Appends the gradients of `ids` to `out`, in id order, row-major.
    pub fn flatten_grads(&self, ids: &[ParamId], out: &mut Vec<f64>) {
        for id in ids {
            out.extend(self.entries[id.0].grad.iter().copied());
        }
    }

    /// Appends the values of `ids` to `out`, in id order, row-major.
    pub fn flatten_values(&self, ids: &[ParamId], out: &mut Vec<f64>) {
        for id in ids {
            out.extend(self.entries[id.0].value.iter().copied());
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SpikeMode {
    /// Heaviside step on the forward pass; rectangular surrogate backward.
    Hard,
    /// Piecewise-linear ramp whose exact derivative equals the surrogate.
    /// Used for finite-difference validation of the backward pass.
    Smooth,
}

enum Op {
    Leaf,
    Param { token: u64, index: usize },
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    MinElem(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    AddRowVec(NodeId, NodeId),
    MulColVec(NodeId, NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    LnClamped(NodeId, f64),
    SoftmaxRows(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    RowSum(NodeId),
    Clamp(NodeId, f64, f64),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceRows(NodeId, usize, usize),
    SliceCols(NodeId, usize, usize),
    GatherRows(NodeId, Rc<Vec<usize>>),
    LayerNormRows(NodeId, f64),
    NormalizeRows(NodeId),
    Spike {
        input: NodeId,
        threshold: f64,
        width: f64,
    },
    LogDetPsd(NodeId, f64),
}

struct Node {
    op: Op,
    value: Rc<Mat>,
}

/// Append-only record of an eager computation. Node values are available
/// immediately; `backward` replays the record in reverse.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &Mat) -> Option<Mat> {
    let n = a.nrows();
    if a.ncols() != n {
        return None;
    }
    let mut l = Mat::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Inverse of `A = L Lᵀ` given its Cholesky factor `L`.
fn spd_inverse(l: &Mat) -> Mat {
    let n = l.nrows();
    let mut inv = Mat::zeros((n, n));
    let mut y = vec![0.0; n];
    for col in 0..n {
        for i in 0..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l[[i, k]] * y[k];
            }
            y[i] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[[k, i]] * inv[[k, col]];
            }
            inv[[i, col]] = s / l[[i, i]];
        }
    }
    inv
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a node. The reference stays valid while the tape lives.
    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    fn check(&self, op: &'static str, id: NodeId) -> Result<(), TapeError> {
        let _ = op;
        if id.0 >= self.nodes.len() {
            return Err(TapeError::UnboundNode {
                node: id.0,
                len: self.nodes.len(),
            });
        }
        Ok(())
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        let v = &self.nodes[id.0].value;
        (v.nrows(), v.ncols())
    }

    fn push(&mut self, op: Op, value: Mat) -> NodeId {
        debug_assert!(
            value.iter().all(|x| x.is_finite()),
            "non-finite value produced at node {}",
            self.nodes.len()
        );
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value: Rc::new(value),
        });
        id
    }

    /// Constant input node; no gradient flows into it.
    pub fn leaf(&mut self, value: Mat) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Rc::new(value),
        });
        id
    }

    /// Constant input shared by reference; avoids copying large matrices.
    pub fn leaf_shared(&mut self, value: Rc<Mat>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
        });
        id
    }

    /// 1x1 constant.
    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.leaf(Mat::from_elem((1, 1), value))
    }

    /// Trainable parameter node; backward accumulates into its grad buffer.
    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> NodeId {
        let value = Rc::clone(&set.entries[id.0].value);
        let nid = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Param {
                token: set.token,
                index: id.0,
            },
            value,
        });
        nid
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.check("matmul", a)?;
        self.check("matmul", b)?;
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(TapeError::ShapeMismatch {
                op: "matmul",
                node: self.nodes.len(),
                lhs: (ar, ac),
                rhs: (br, bc),
            });
        }
        let v = self.nodes[a.0].value.dot(&*self.nodes[b.0].value);
        Ok(self.push(Op::Matmul(a, b), v))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.check("transpose", a)?;
        let v = self.nodes[a.0].value.t().to_owned();
        Ok(self.push(Op::Transpose(a), v))
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<(), TapeError> {
        self.check(op_name, a)?;
        self.check(op_name, b)?;
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(TapeError::ShapeMismatch {
                op: op_name,
                node: self.nodes.len(),
                lhs: sa,
                rhs: sb,
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.binary_same_shape("add", a, b)?;
        let v = &*self.nodes[a.0].value + &*self.nodes[b.0].value;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.binary_same_shape("sub", a, b)?;
        let v = &*self.nodes[a.0].value - &*self.nodes[b.0].value;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.binary_same_shape("mul", a, b)?;
        let v = &*self.nodes[a.0].value * &*self.nodes[b.0].value;
        Ok(self.push(Op::MulElem(a, b), v))
    }

    /// Elementwise minimum. Ties route the gradient to the first input.
    pub fn min_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.binary_same_shape("min_elem", a, b)?;
        let va = &*self.nodes[a.0].value;
        let vb = &*self.nodes[b.0].value;
        let mut v = va.clone();
        v.zip_mut_with(vb, |x, &y| {
            if y < *x {
                *x = y;
            }
        });
        Ok(self.push(Op::MinElem(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, TapeError> {
        self.check("scale", a)?;
        let v = &*self.nodes[a.0].value * c;
        Ok(self.push(Op::Scale(a, c), v))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId, TapeError> {
        self.check("add_scalar", a)?;
        let v = &*self.nodes[a.0].value + c;
        Ok(self.push(Op::AddScalar(a), v))
    }

    /// Adds a `[1, n]` row vector to every row of a `[r, n]` matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId, TapeError> {
        self.check("add_row", a)?;
        self.check("add_row", row)?;
        let (ar, ac) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != ac {
            return Err(TapeError::ShapeMismatch {
                op: "add_row",
                node: self.nodes.len(),
                lhs: (ar, ac),
                rhs: (rr, rc),
            });
        }
        let v = &*self.nodes[a.0].value + &self.nodes[row.0].value.row(0);
        Ok(self.push(Op::AddRowVec(a, row), v))
    }

    /// Scales row `i` of a `[r, n]` matrix by entry `i` of a `[r, 1]` column.
    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> Result<NodeId, TapeError> {
        self.check("mul_col", a)?;
        self.check("mul_col", col)?;
        let (ar, ac) = self.shape(a);
        let (cr, cc) = self.shape(col);
        if cc != 1 || cr != ar {
            return Err(TapeError::ShapeMismatch {
                op: "mul_col",
                node: self.nodes.len(),
                lhs: (ar, ac),
                rhs: (cr, cc),
            });
        }
        let mut v = (*self.nodes[a.0].value).clone();
        let c = Rc::clone(&self.nodes[col.0].value);
        for (i, mut r) in v.rows_mut().into_iter().enumerate() {
            r *= c[[i, 0]];
        }
        Ok(self.push(Op::MulColVec(a, col), v))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.check("tanh", a)?;
        let v = self.nodes[a.0].value.mapv(f64::tanh);
        Ok(self.push(Op::Tanh(a), v))
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.check("softplus", a)?;
        let v = self.nodes[a.0].value.mapv(softplus);
        Ok(self.push(Op::Softplus(a), v))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.check("exp", a)?;
        let v = self.nodes[a.0].value.mapv(f64::exp);
        Ok(self.push(Op::Exp(a), v))
    }

    /// Natural log of `max(x, floor)`; the gradient is zero below the floor.
    pub fn ln_clamped(&mut self, a: NodeId, floor: f64) -> Result<NodeId, TapeError> {
        self.check("ln_clamped", a)?;
        assert!(floor > 0.0, "ln floor must be positive");
        let v = self.nodes[a.0].value.mapv(|x| x.max(floor).ln());
        Ok(self.push(Op::LnClamped(a, floor), v))
    }

    /// Row-wise softmax, numerically stabilized by the row maximum.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.check("softmax_rows", a)?;
        let mut v = (*self.nodes[a.0].value).clone();
        for mut row in v.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        Ok(self.push(Op::SoftmaxRows(a), v))
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.check("sum_all", a)?;
        let s = self.nodes[a.0].value.sum();
        Ok(self.push(Op::SumAll(a), Mat::from_elem((1, 1), s)))
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.check("mean_all", a)?;
        let v = &self.nodes[a.0].value;
        let s = v.sum() / v.len() as f64;
        Ok(self.push(Op::MeanAll(a), Mat::from_elem((1, 1), s)))
    }

    /// Sums each row of `[r, n]` into a `[r, 1]` column.
    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.check("row_sum", a)?;
        let v = self.nodes[a.0].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        Ok(self.push(Op::RowSum(a), v))
    }

    /// Clamps into `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId, TapeError> {
        self.check("clamp", a)?;
        assert!(lo <= hi, "clamp bounds must be ordered");
        let v = self.nodes[a.0].value.mapv(|x| x.clamp(lo, hi));
        Ok(self.push(Op::Clamp(a, lo, hi), v))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TapeError> {
        if parts.is_empty() {
            return Err(TapeError::EmptyInput { op: "concat_cols" });
        }
        for &p in parts {
            self.check("concat_cols", p)?;
        }
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(TapeError::ShapeMismatch {
                    op: "concat_cols",
                    node: self.nodes.len(),
                    lhs: (rows, cols),
                    rhs: s,
                });
            }
            cols += s.1;
        }
        let mut v = Mat::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let pv = &*self.nodes[p.0].value;
            let w = pv.ncols();
            v.slice_mut(ndarray::s![.., at..at + w]).assign(pv);
            at += w;
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), v))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, TapeError> {
        if parts.is_empty() {
            return Err(TapeError::EmptyInput { op: "concat_rows" });
        }
        for &p in parts {
            self.check("concat_rows", p)?;
        }
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.1 != cols {
                return Err(TapeError::ShapeMismatch {
                    op: "concat_rows",
                    node: self.nodes.len(),
                    lhs: (rows, cols),
                    rhs: s,
                });
            }
            rows += s.0;
        }
        let mut v = Mat::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let pv = &*self.nodes[p.0].value;
            let h = pv.nrows();
            v.slice_mut(ndarray::s![at..at + h, ..]).assign(pv);
            at += h;
        }
        Ok(self.push(Op::ConcatRows(parts.to_vec()), v))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, TapeError> {
        self.check("slice_rows", a)?;
        let (r, c) = self.shape(a);
        if start + len > r {
            return Err(TapeError::BadShape {
                op: "slice_rows",
                node: self.nodes.len(),
                expected: "slice within row range",
                got: (r, c),
            });
        }
        let v = self.nodes[a.0]
            .value
            .slice(ndarray::s![start..start + len, ..])
            .to_owned();
        Ok(self.push(Op::SliceRows(a, start, len), v))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, TapeError> {
        self.check("slice_cols", a)?;
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(TapeError::BadShape {
                op: "slice_cols",
                node: self.nodes.len(),
                expected: "slice within column range",
                got: (r, c),
            });
        }
        let v = self.nodes[a.0]
            .value
            .slice(ndarray::s![.., start..start + len])
            .to_owned();
        Ok(self.push(Op::SliceCols(a, start, len), v))
    }

    /// Builds a matrix whose row `i` is row `indices[i]` of the input.
    /// Backward scatter-adds, so repeated indices accumulate.
    pub fn gather_rows(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId, TapeError> {
        self.check("gather_rows", a)?;
        let (r, c) = self.shape(a);
        for &i in &indices {
            if i >= r {
                return Err(TapeError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    rows: r,
                });
            }
        }
        let src = &self.nodes[a.0].value;
        let mut v = Mat::zeros((indices.len(), c));
        for (dst, &i) in indices.iter().enumerate() {
            v.row_mut(dst).assign(&src.row(i));
        }
        Ok(self.push(Op::GatherRows(a, Rc::new(indices)), v))
    }

    /// Normalizes each row to zero mean and unit variance with an `eps` guard.
    pub fn layer_norm_rows(&mut self, a: NodeId, eps: f64) -> Result<NodeId, TapeError> {
        self.check("layer_norm_rows", a)?;
        let mut v = (*self.nodes[a.0].value).clone();
        for mut row in v.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|x| (x - mean) * inv);
        }
        Ok(self.push(Op::LayerNormRows(a, eps), v))
    }

    /// Scales each row to unit Euclidean norm. Near-zero rows are an error.
    pub fn normalize_rows(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.check("normalize_rows", a)?;
        let src = &self.nodes[a.0].value;
        let mut v = (**src).clone();
        for (i, mut row) in v.rows_mut().into_iter().enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(TapeError::ZeroRowNorm {
                    op: "normalize_rows",
                    row: i,
                    node: a.0,
                });
            }
            row.mapv_inplace(|x| x / norm);
        }
        Ok(self.push(Op::NormalizeRows(a), v))
    }

    /// Spike nonlinearity. `Hard` emits 0/1 by thresholding; `Smooth` emits a
    /// ramp `clip((v - threshold + width) / (2 width), 0, 1)`. Both modes
    /// share the same backward rule: `1 / (2 width)` inside the window
    /// `|v - threshold| < width`, zero outside.
    pub fn spike(
        &mut self,
        a: NodeId,
        threshold: f64,
        width: f64,
        mode: SpikeMode,
    ) -> Result<NodeId, TapeError> {
        self.check("spike", a)?;
        assert!(width > 0.0, "surrogate window width must be positive");
        let v = match mode {
            SpikeMode::Hard => self.nodes[a.0]
                .value
                .mapv(|x| if x >= threshold { 1.0 } else { 0.0 }),
            SpikeMode::Smooth => self.nodes[a.0]
                .value
                .mapv(|x| ((x - threshold + width) / (2.0 * width)).clamp(0.0, 1.0)),
        };
        Ok(self.push(
            Op::Spike {
                input: a,
                threshold,
                width,
            },
            v,
        ))
    }

    /// `log det(X + jitter I)` of a symmetric positive-semidefinite matrix,
    /// evaluated through a Cholesky factorization.
    pub fn logdet_psd(&mut self, a: NodeId, jitter: f64) -> Result<NodeId, TapeError> {
        self.check("logdet_psd", a)?;
        let (r, c) = self.shape(a);
        if r != c {
            return Err(TapeError::BadShape {
                op: "logdet_psd",
                node: self.nodes.len(),
                expected: "square matrix",
                got: (r, c),
            });
        }
        let mut m = (*self.nodes[a.0].value).clone();
        for i in 0..r {
            m[[i, i]] += jitter;
        }
        let l = cholesky(&m).ok_or(TapeError::NotPositiveDefinite {
            op: "logdet_psd",
            node: a.0,
        })?;
        let val = 2.0 * (0..r).map(|i| l[[i, i]].ln()).sum::<f64>();
        Ok(self.push(Op::LogDetPsd(a, jitter), Mat::from_elem((1, 1), val)))
    }

    /// Mean of `(a - b)^2` over all entries; convenience for value losses.
    pub fn mean_sq_diff(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean_all(sq)
    }

    /// Runs reverse-mode accumulation from a scalar `loss` node. Parameter
    /// nodes route their gradients into `set`; leaves absorb theirs.
    pub fn backward(&self, loss: NodeId, set: &mut ParamSet) -> Result<(), TapeError> {
        self.check("backward", loss)?;
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TapeError::NonScalarLoss {
                node: loss.0,
                shape,
            });
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));

        fn acc(slot: &mut Option<Mat>, d: Mat) {
            debug_assert!(d.iter().all(|x| x.is_finite()), "non-finite gradient");
            match slot {
                Some(g) => *g += &d,
                None => *slot = Some(d),
            }
        }

        for idx in (0..=loss.0).rev() {
            let d = match grads[idx].take() {
                Some(d) => d,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Param { token, index } => {
                    if *token != set.token {
                        return Err(TapeError::ForeignParam { node: idx });
                    }
                    set.accumulate_grad(ParamId(*index), &d);
                }
                Op::Matmul(a, b) => {
                    let va = &self.nodes[a.0].value;
                    let vb = &self.nodes[b.0].value;
                    let da = d.dot(&vb.t());
                    let db = va.t().dot(&d);
                    acc(&mut grads[a.0], da);
                    acc(&mut grads[b.0], db);
                }
                Op::Transpose(a) => {
                    acc(&mut grads[a.0], d.t().to_owned());
                }
                Op::Add(a, b) => {
                    acc(&mut grads[a.0], d.clone());
                    acc(&mut grads[b.0], d);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads[a.0], d.clone());
                    acc(&mut grads[b.0], -d);
                }
                Op::MulElem(a, b) => {
                    let da = &d * &*self.nodes[b.0].value;
                    let db = &d * &*self.nodes[a.0].value;
                    acc(&mut grads[a.0], da);
                    acc(&mut grads[b.0], db);
                }
                Op::MinElem(a, b) => {
                    let va = &self.nodes[a.0].value;
                    let vb = &self.nodes[b.0].value;
                    let mut da = d.clone();
                    let mut db = d;
                    for ((x, y), (ga, gb)) in va
                        .iter()
                        .zip(vb.iter())
                        .zip(da.iter_mut().zip(db.iter_mut()))
                    {
                        if x <= y {
                            *gb = 0.0;
                        } else {
                            *ga = 0.0;
                        }
                    }
                    acc(&mut grads[a.0], da);
                    acc(&mut grads[b.0], db);
                }
                Op::Scale(a, c) => {
                    acc(&mut grads[a.0], &d * *c);
                }
                Op::AddScalar(a) => {
                    acc(&mut grads[a.0], d);
                }
                Op::AddRowVec(a, row) => {
                    let drow = d.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads[a.0], d);
                    acc(&mut grads[row.0], drow);
                }
                Op::MulColVec(a, col) => {
                    let va = &self.nodes[a.0].value;
                    let vc = &self.nodes[col.0].value;
                    let mut da = d.clone();
                    for (i, mut r) in da.rows_mut().into_iter().enumerate() {
                        r *= vc[[i, 0]];
                    }
                    let mut dc = Mat::zeros((va.nrows(), 1));
                    for i in 0..va.nrows() {
                        dc[[i, 0]] = d.row(i).dot(&va.row(i));
                    }
                    acc(&mut grads[a.0], da);
                    acc(&mut grads[col.0], dc);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[idx].value;
                    let da = &d * &y.mapv(|t| 1.0 - t * t);
                    acc(&mut grads[a.0], da);
                }
                Op::Softplus(a) => {
                    let x = &self.nodes[a.0].value;
                    let da = &d * &x.mapv(sigmoid);
                    acc(&mut grads[a.0], da);
                }
                Op::Exp(a) => {
                    let y = &self.nodes[idx].value;
                    acc(&mut grads[a.0], &d * &**y);
                }
                Op::LnClamped(a, floor) => {
                    let x = &*self.nodes[a.0].value;
                    let mut da = d;
                    da.zip_mut_with(x, |g, &xv| {
                        *g = if xv >= *floor { *g / xv } else { 0.0 };
                    });
                    acc(&mut grads[a.0], da);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[idx].value;
                    let mut da = d;
                    for (mut drow, yrow) in da.rows_mut().into_iter().zip(y.rows()) {
                        let dot = drow.dot(&yrow);
                        for (g, &p) in drow.iter_mut().zip(yrow.iter()) {
                            *g = p * (*g - dot);
                        }
                    }
                    acc(&mut grads[a.0], da);
                }
                Op::SumAll(a) => {
                    let s = self.shape(*a);
                    acc(&mut grads[a.0], Mat::from_elem(s, d[[0, 0]]));
                }
                Op::MeanAll(a) => {
                    let s = self.shape(*a);
                    let scale = d[[0, 0]] / (s.0 * s.1) as f64;
                    acc(&mut grads[a.0], Mat::from_elem(s, scale));
                }
                Op::RowSum(a) => {
                    let s = self.shape(*a);
                    let mut da = Mat::zeros(s);
                    for (i, mut row) in da.rows_mut().into_iter().enumerate() {
                        row.fill(d[[i, 0]]);
                    }
                    acc(&mut grads[a.0], da);
                }
                Op::Clamp(a, lo, hi) => {
                    let x = &*self.nodes[a.0].value;
                    let mut da = d;
                    da.zip_mut_with(x, |g, &xv| {
                        if xv <= *lo || xv >= *hi {
                            *g = 0.0;
                        }
                    });
                    acc(&mut grads[a.0], da);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        let dp = d.slice(ndarray::s![.., at..at + w]).to_owned();
                        acc(&mut grads[p.0], dp);
                        at += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        let dp = d.slice(ndarray::s![at..at + h, ..]).to_owned();
                        acc(&mut grads[p.0], dp);
                        at += h;
                    }
                }
                Op::SliceRows(a, start, len) => {
                    let s = self.shape(*a);
                    let mut da = Mat::zeros(s);
                    da.slice_mut(ndarray::s![*start..*start + *len, ..])
                        .assign(&d);
                    acc(&mut grads[a.0], da);
                }
                Op::SliceCols(a, start, len) => {
                    let s = self.shape(*a);
                    let mut da = Mat::zeros(s);
                    da.slice_mut(ndarray::s![.., *start..*start + *len])
                        .assign(&d);
                    acc(&mut grads[a.0], da);
                }
                Op::GatherRows(a, indices) => {
                    let s = self.shape(*a);
                    let mut da = Mat::zeros(s);
                    for (src, &i) in indices.iter().enumerate() {
                        let mut row = da.row_mut(i);
                        row += &d.row(src);
                    }
                    acc(&mut grads[a.0], da);
                }
                Op::LayerNormRows(a, eps) => {
                    let x = &self.nodes[a.0].value;
                    let y = &self.nodes[idx].value;
                    let mut da = Mat::zeros(x.raw_dim());
                    for i in 0..x.nrows() {
                        let xrow = x.row(i);
                        let yrow = y.row(i);
                        let drow = d.row(i);
                        let n = xrow.len() as f64;
                        let mean = xrow.sum() / n;
                        let var =
                            xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let dmean = drow.sum() / n;
                        let dydot = drow.dot(&yrow) / n;
                        for j in 0..xrow.len() {
                            da[[i, j]] = inv * (drow[j] - dmean - yrow[j] * dydot);
                        }
                    }
                    acc(&mut grads[a.0], da);
                }
                Op::NormalizeRows(a) => {
                    let x = &self.nodes[a.0].value;
                    let y = &self.nodes[idx].value;
                    let mut da = Mat::zeros(x.raw_dim());
                    for i in 0..x.nrows() {
                        let norm = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                        let dot = d.row(i).dot(&y.row(i));
                        for j in 0..x.ncols() {
                            da[[i, j]] = (d[[i, j]] - y[[i, j]] * dot) / norm;
                        }
                    }
                    acc(&mut grads[a.0], da);
                }
                Op::Spike {
                    input,
                    threshold,
                    width,
                } => {
                    let x = &*self.nodes[input.0].value;
                    let gain = 1.0 / (2.0 * width);
                    let mut da = d;
                    da.zip_mut_with(x, |g, &v| {
                        *g = if (v - threshold).abs() < *width {
                            *g * gain
                        } else {
                            0.0
                        };
                    });
                    acc(&mut grads[input.0], da);
                }
                Op::LogDetPsd(a, jitter) => {
                    let x = &self.nodes[a.0].value;
                    let n = x.nrows();
                    let mut m = (**x).clone();
                    for i in 0..n {
                        m[[i, i]] += jitter;
                    }
                    let l = cholesky(&m).expect("factorization succeeded in forward");
                    let inv = spd_inverse(&l);
                    acc(&mut grads[a.0], &inv * d[[0, 0]]);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn grad_of(set: &ParamSet, name: &str) -> Mat {
        set.grad(set.id_of(name).unwrap()).clone()
    }

    #[test]
    fn matmul_gradients_match_hand_computation() {
        let mut set = ParamSet::new();
        let a = set.add("a", array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = set.add("b", array![[5.0, 6.0], [7.0, 8.0]]).unwrap();
        let mut t = Tape::new();
        let na = t.param(&set, a);
        let nb = t.param(&set, b);
        let prod = t.matmul(na, nb).unwrap();
        let loss = t.sum_all(prod).unwrap();
        t.backward(loss, &mut set).unwrap();
        // d/dA sum(AB) = ones @ Bᵀ, d/dB = Aᵀ @ ones.
        assert_eq!(grad_of(&set, "a"), array![[11.0, 15.0], [11.0, 15.0]]);
        assert_eq!(grad_of(&set, "b"), array![[4.0, 4.0], [6.0, 6.0]]);
    }

    #[test]
    fn softmax_of_uniform_logits_is_uniform() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::zeros((1, 6)));
        let p = t.softmax_rows(x).unwrap();
        for &v in t.value(p).iter() {
            assert_abs_diff_eq!(v, 1.0 / 6.0, epsilon = 1e-15);
        }
        let lp = t.ln_clamped(p, 1e-12).unwrap();
        assert_abs_diff_eq!(t.value(lp)[[0, 0]], -1.7918, epsilon = 1e-4);
    }

    #[test]
    fn cross_entropy_gradient_at_uniform_logits() {
        let mut set = ParamSet::new();
        let logits = set.add("logits", Mat::zeros((1, 6))).unwrap();
        let mut t = Tape::new();
        let x = t.param(&set, logits);
        let p = t.softmax_rows(x).unwrap();
        let lp = t.ln_clamped(p, 1e-12).unwrap();
        let mut onehot = Mat::zeros((1, 6));
        onehot[[0, 0]] = 1.0;
        let oh = t.leaf(onehot);
        let picked = t.mul(lp, oh).unwrap();
        let nll_sum = t.sum_all(picked).unwrap();
        let loss = t.scale(nll_sum, -1.0).unwrap();
        t.backward(loss, &mut set).unwrap();
        let g = grad_of(&set, "logits");
        assert_abs_diff_eq!(g[[0, 0]], 1.0 / 6.0 - 1.0, epsilon = 1e-12);
        for j in 1..6 {
            assert_abs_diff_eq!(g[[0, j]], 1.0 / 6.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn spike_threshold_and_surrogate_window() {
        let mut set = ParamSet::new();
        let v = set.add("v", array![[0.4, 0.5, 1.1, -0.1]]).unwrap();
        let mut t = Tape::new();
        let nv = t.param(&set, v);
        let s = t.spike(nv, 0.5, 0.5, SpikeMode::Hard).unwrap();
        assert_eq!(t.value(s), &array![[0.0, 1.0, 1.0, 0.0]]);
        let total = t.sum_all(s).unwrap();
        t.backward(total, &mut set).unwrap();
        // Window is |v - 0.5| < 0.5, gain 1/(2*0.5) = 1.
        assert_eq!(grad_of(&set, "v"), array![[1.0, 1.0, 0.0, 0.0]]);
    }

    #[test]
    fn smooth_spike_is_a_ramp_matching_the_surrogate() {
        let mut t = Tape::new();
        let v = t.leaf(array![[-0.1, 0.0, 0.4, 0.5, 0.9, 1.2]]);
        let s = t.spike(v, 0.5, 0.5, SpikeMode::Smooth).unwrap();
        let got = t.value(s);
        let want = array![[0.0, 0.0, 0.4, 0.5, 0.9, 1.0]];
        for (a, b) in got.iter().zip(want.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn logdet_identity_and_duplicate_rows() {
        let mut t = Tape::new();
        // Orthonormal rows: G = I, log det(I + 1e-6 I) = 2 ln(1 + 1e-6).
        let b = t.leaf(array![[1.0, 0.0], [0.0, 1.0]]);
        let bt = t.transpose(b).unwrap();
        let g = t.matmul(b, bt).unwrap();
        let ld = t.logdet_psd(g, 1e-6).unwrap();
        assert_abs_diff_eq!(t.value(ld)[[0, 0]], 2.0 * (1.0f64 + 1e-6).ln(), epsilon = 1e-12);

        // Identical unit rows: eigenvalues 2 + eps and eps.
        let mut t2 = Tape::new();
        let b2 = t2.leaf(array![[1.0, 0.0], [1.0, 0.0]]);
        let bt2 = t2.transpose(b2).unwrap();
        let g2 = t2.matmul(b2, bt2).unwrap();
        let ld2 = t2.logdet_psd(g2, 1e-6).unwrap();
        let expect = (2.0f64 + 1e-6).ln() + 1e-6f64.ln();
        assert_abs_diff_eq!(t2.value(ld2)[[0, 0]], expect, epsilon = 1e-9);
        assert_abs_diff_eq!(t2.value(ld2)[[0, 0]], -13.12, epsilon = 1e-2);
    }

    #[test]
    fn logdet_gradient_is_the_inverse() {
        let mut set = ParamSet::new();
        let g = set.add("g", array![[2.0, 0.0], [0.0, 4.0]]).unwrap();
        let mut t = Tape::new();
        let ng = t.param(&set, g);
        let ld = t.logdet_psd(ng, 0.0).unwrap();
        t.backward(ld, &mut set).unwrap();
        let grad = grad_of(&set, "g");
        assert_abs_diff_eq!(grad[[0, 0]], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(grad[[1, 1]], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(grad[[0, 1]], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gather_rows_accumulates_repeated_indices() {
        let mut set = ParamSet::new();
        let a = set.add("a", array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let mut t = Tape::new();
        let na = t.param(&set, a);
        let g = t.gather_rows(na, vec![0, 0, 1]).unwrap();
        assert_eq!(t.value(g).nrows(), 3);
        let s = t.sum_all(g).unwrap();
        t.backward(s, &mut set).unwrap();
        assert_eq!(grad_of(&set, "a"), array![[2.0, 2.0], [1.0, 1.0]]);
    }

    #[test]
    fn min_and_clamp_route_gradients() {
        let mut set = ParamSet::new();
        let a = set.add("a", array![[1.0, 5.0]]).unwrap();
        let b = set.add("b", array![[2.0, 3.0]]).unwrap();
        let mut t = Tape::new();
        let na = t.param(&set, a);
        let nb = t.param(&set, b);
        let m = t.min_elem(na, nb).unwrap();
        assert_eq!(t.value(m), &array![[1.0, 3.0]]);
        let s = t.sum_all(m).unwrap();
        t.backward(s, &mut set).unwrap();
        assert_eq!(grad_of(&set, "a"), array![[1.0, 0.0]]);
        assert_eq!(grad_of(&set, "b"), array![[0.0, 1.0]]);

        let mut set2 = ParamSet::new();
        let c = set2.add("c", array![[0.5, 1.5, 2.5]]).unwrap();
        let mut t2 = Tape::new();
        let nc = t2.param(&set2, c);
        let cl = t2.clamp(nc, 1.0, 2.0).unwrap();
        assert_eq!(t2.value(cl), &array![[1.0, 1.5, 2.0]]);
        let s2 = t2.sum_all(cl).unwrap();
        t2.backward(s2, &mut set2).unwrap();
        assert_eq!(grad_of(&set2, "c"), array![[0.0, 1.0, 0.0]]);
    }

    #[test]
    fn shape_mismatch_is_a_structured_error() {
        let mut t = Tape::new();
        let a = t.leaf(Mat::zeros((2, 3)));
        let b = t.leaf(Mat::zeros((2, 3)));
        let err = t.matmul(a, b).unwrap_err();
        match err {
            TapeError::ShapeMismatch { op, lhs, rhs, .. } => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, (2, 3));
                assert_eq!(rhs, (2, 3));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unbound_handle_is_rejected() {
        let mut t = Tape::new();
        let a = t.leaf(Mat::zeros((1, 1)));
        let bogus = NodeId(17);
        assert!(matches!(
            t.add(a, bogus),
            Err(TapeError::UnboundNode { node: 17, .. })
        ));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut set = ParamSet::new();
        let mut t = Tape::new();
        let a = t.leaf(Mat::zeros((2, 2)));
        assert!(matches!(
            t.backward(a, &mut set),
            Err(TapeError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn param_set_clone_is_a_snapshot() {
        let mut set = ParamSet::new();
        let id = set.add("w", array![[1.0]]).unwrap();
        let snap = set.clone();
        set.value_mut(id)[[0, 0]] = 9.0;
        assert_eq!(snap.value(ParamId(0))[[0, 0]], 1.0);
        assert_eq!(set.value(id)[[0, 0]], 9.0);
    }

    #[test]
    fn foreign_param_set_is_rejected_in_backward() {
        let mut set_a = ParamSet::new();
        let mut set_b = ParamSet::new();
        let ida = set_a.add("w", array![[2.0]]).unwrap();
        set_b.add("w", array![[2.0]]).unwrap();
        let mut t = Tape::new();
        let n = t.param(&set_a, ida);
        let loss = t.sum_all(n).unwrap();
        assert!(matches!(
            t.backward(loss, &mut set_b),
            Err(TapeError::ForeignParam { .. })
        ));
    }

    #[test]
    fn layer_norm_rows_zero_mean_unit_variance() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, 2.0, 3.0, 4.0]]);
        let y = t.layer_norm_rows(x, 1e-5).unwrap();
        let row = t.value(y);
        let mean: f64 = row.iter().sum::<f64>() / 4.0;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn normalize_rows_rejects_zero_rows() {
        let mut t = Tape::new();
        let x = t.leaf(array![[0.0, 0.0]]);
        assert!(matches!(
            t.normalize_rows(x),
            Err(TapeError::ZeroRowNorm { row: 0, .. })
        ));
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut set = ParamSet::new();
        let a = set.add("a", array![[1.0, 2.0]]).unwrap();
        let b = set.add("b", array![[3.0, 4.0]]).unwrap();
        let mut t = Tape::new();
        let na = t.param(&set, a);
        let nb = t.param(&set, b);
        let cat = t.concat_rows(&[na, nb]).unwrap();
        let back = t.slice_rows(cat, 1, 1).unwrap();
        assert_eq!(t.value(back), &array![[3.0, 4.0]]);
        let s = t.sum_all(back).unwrap();
        t.backward(s, &mut set).unwrap();
        assert_eq!(grad_of(&set, "a"), array![[0.0, 0.0]]);
        assert_eq!(grad_of(&set, "b"), array![[1.0, 1.0]]);
    }
}
