//! Define-by-run reverse-mode automatic differentiation on dense 2-D
//! tensors. A fresh [`Tape`] is built for every forward pass; `backward`
//! walks the recorded operations in reverse.
//!
//! Broadcasting is deliberately minimal: binary elementwise operations
//! accept a right operand that is the same shape, a single row `[1, c]`,
//! a single column `[r, 1]`, or a scalar `[1, 1]`.

use crate::error::{Error, Result};
use crate::numerics::tensor::{ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<ParamId> },
    Matmul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    Neg { a: usize },
    Exp { a: usize },
    Log { a: usize },
    Tanh { a: usize },
    Sigmoid { a: usize },
    Softplus { a: usize },
    AddScalar { a: usize },
    MulScalar { a: usize, c: f64 },
    Maximum { a: usize, b: usize },
    MaximumScalar { a: usize, c: f64 },
    SumAll { a: usize },
    MeanAll { a: usize },
    RowSum { a: usize },
    Softmax { a: usize },
    SegmentSoftmax { a: usize, segments: Vec<usize> },
    GatherRows { a: usize, idx: Vec<usize> },
    ScatterAddRows { a: usize, idx: Vec<usize> },
    SelectPerRow { a: usize, cols: Vec<usize> },
    ConcatCols { parts: Vec<usize> },
    Reshape { a: usize },
    Transpose { a: usize },
    StraightThrough { grad_to: usize },
    Detach,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Matmul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Div { .. } => "div",
            Op::Neg { .. } => "neg",
            Op::Exp { .. } => "exp",
            Op::Log { .. } => "log",
            Op::Tanh { .. } => "tanh",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Softplus { .. } => "softplus",
            Op::AddScalar { .. } => "add_scalar",
            Op::MulScalar { .. } => "mul_scalar",
            Op::Maximum { .. } => "maximum",
            Op::MaximumScalar { .. } => "maximum_scalar",
            Op::SumAll { .. } => "sum",
            Op::MeanAll { .. } => "mean",
            Op::RowSum { .. } => "row_sum",
            Op::Softmax { .. } => "softmax",
            Op::SegmentSoftmax { .. } => "segment_softmax",
            Op::GatherRows { .. } => "gather_rows",
            Op::ScatterAddRows { .. } => "scatter_add_rows",
            Op::SelectPerRow { .. } => "select_per_row",
            Op::ConcatCols { .. } => "concat_cols",
            Op::Reshape { .. } => "reshape",
            Op::Transpose { .. } => "transpose",
            Op::StraightThrough { .. } => "straight_through",
            Op::Detach => "detach",
        }
    }
}

struct Node {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// How the right operand of a binary elementwise op lines up with the left.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Broadcast {
    Same,
    Row,
    Col,
    Scalar,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Gradient of the last `backward` pass w.r.t. `v` (zeros if none reached).
    pub fn grad(&self, v: Var) -> Vec<f64> {
        match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[v.0].data.len()],
        }
    }

    fn push(&mut self, data: Vec<f64>, rows: usize, cols: usize, op: Op) -> Result<Var> {
        debug_assert_eq!(data.len(), rows * cols);
        if let Some(_bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: op.name(),
                node: self.nodes.len(),
            });
        }
        self.nodes.push(Node {
            data,
            rows,
            cols,
            grad: None,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Record a constant (no gradient ever flows out of it).
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            data: t.data.clone(),
            rows: t.rows(),
            cols: t.cols(),
            grad: None,
            op: Op::Leaf { param: None },
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant_row(&mut self, data: Vec<f64>) -> Var {
        let cols = data.len();
        self.nodes.push(Node {
            data,
            rows: 1,
            cols,
            grad: None,
            op: Op::Leaf { param: None },
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant_col(&mut self, data: Vec<f64>) -> Var {
        let rows = data.len();
        self.nodes.push(Node {
            data,
            rows,
            cols: 1,
            grad: None,
            op: Op::Leaf { param: None },
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant_matrix(&mut self, data: Vec<f64>, rows: usize, cols: usize) -> Var {
        assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node {
            data,
            rows,
            cols,
            grad: None,
            op: Op::Leaf { param: None },
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a parameter leaf; `accumulate_param_grads` later routes the
    /// gradient back into the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        self.nodes.push(Node {
            data: t.data.clone(),
            rows: t.rows(),
            cols: t.cols(),
            grad: None,
            op: Op::Leaf { param: Some(id) },
        });
        Var(self.nodes.len() - 1)
    }

    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (ar, ac) == (br, bc) {
            Ok(Broadcast::Same)
        } else if br == 1 && bc == ac {
            Ok(Broadcast::Row)
        } else if bc == 1 && br == ar {
            Ok(Broadcast::Col)
        } else if br == 1 && bc == 1 {
            Ok(Broadcast::Scalar)
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: vec![ar, ac],
                rhs: vec![br, bc],
            })
        }
    }

    fn binary_forward(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let kind = self.broadcast_kind(op.name(), a, b)?;
        let (rows, cols) = self.shape(a);
        let av = &self.nodes[a.0].data;
        let bv = &self.nodes[b.0].data;
        let mut out = vec![0.0; rows * cols];
        match kind {
            Broadcast::Same => {
                for i in 0..out.len() {
                    out[i] = f(av[i], bv[i]);
                }
            }
            Broadcast::Row => {
                for r in 0..rows {
                    let base = r * cols;
                    for c in 0..cols {
                        out[base + c] = f(av[base + c], bv[c]);
                    }
                }
            }
            Broadcast::Col => {
                for r in 0..rows {
                    let base = r * cols;
                    for c in 0..cols {
                        out[base + c] = f(av[base + c], bv[r]);
                    }
                }
            }
            Broadcast::Scalar => {
                for i in 0..out.len() {
                    out[i] = f(av[i], bv[0]);
                }
            }
        }
        self.push(out, rows, cols, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_forward(a, b, Op::Add { a: a.0, b: b.0 }, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_forward(a, b, Op::Sub { a: a.0, b: b.0 }, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_forward(a, b, Op::Mul { a: a.0, b: b.0 }, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_forward(a, b, Op::Div { a: a.0, b: b.0 }, |x, y| x / y)
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (ar, ac) != (br, bc) {
            return Err(Error::ShapeMismatch {
                op: "maximum",
                lhs: vec![ar, ac],
                rhs: vec![br, bc],
            });
        }
        self.binary_forward(a, b, Op::Maximum { a: a.0, b: b.0 }, f64::max)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let av = &self.nodes[a.0].data;
        let bv = &self.nodes[b.0].data;
        let out = matmul_raw(av, bv, m, k, n);
        self.push(out, m, n, Op::Matmul { a: a.0, b: b.0 })
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| f(x)).collect();
        self.push(out, rows, cols, op)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Neg { a: a.0 }, |x| -x)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp { a: a.0 }, f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Log { a: a.0 }, f64::ln)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh { a: a.0 }, f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid { a: a.0 }, sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Softplus { a: a.0 }, softplus)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::AddScalar { a: a.0 }, |x| x + c)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::MulScalar { a: a.0, c }, |x| x * c)
    }

    pub fn maximum_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::MaximumScalar { a: a.0, c }, |x| x.max(c))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        self.push(vec![s], 1, 1, Op::SumAll { a: a.0 })
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.nodes[a.0].data.len() as f64;
        let s: f64 = self.nodes[a.0].data.iter().sum();
        self.push(vec![s / n], 1, 1, Op::MeanAll { a: a.0 })
    }

    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        let av = &self.nodes[a.0].data;
        let out: Vec<f64> = (0..rows)
            .map(|r| av[r * cols..(r + 1) * cols].iter().sum())
            .collect();
        self.push(out, rows, 1, Op::RowSum { a: a.0 })
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        let av = &self.nodes[a.0].data;
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &av[r * cols..(r + 1) * cols];
            softmax_into(row, &mut out[r * cols..(r + 1) * cols]);
        }
        self.push(out, rows, cols, Op::Softmax { a: a.0 })
    }

    /// Softmax over contiguous segments of a column vector. `segments[i]`
    /// is the segment id of element `i`; ids must be non-decreasing.
    pub fn segment_softmax(&mut self, a: Var, segments: &[usize]) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if cols != 1 || rows != segments.len() {
            return Err(Error::ShapeMismatch {
                op: "segment_softmax",
                lhs: vec![rows, cols],
                rhs: vec![segments.len(), 1],
            });
        }
        debug_assert!(segments.windows(2).all(|w| w[0] <= w[1]));
        let av = self.nodes[a.0].data.clone();
        let mut out = vec![0.0; rows];
        let mut start = 0;
        while start < rows {
            let seg = segments[start];
            let mut end = start;
            while end < rows && segments[end] == seg {
                end += 1;
            }
            softmax_into(&av[start..end], &mut out[start..end]);
            start = end;
        }
        self.push(
            out,
            rows,
            1,
            Op::SegmentSoftmax {
                a: a.0,
                segments: segments.to_vec(),
            },
        )
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::InvalidTensor(format!(
                "gather_rows index {bad} out of bounds for {rows} rows"
            )));
        }
        let av = &self.nodes[a.0].data;
        let mut out = vec![0.0; idx.len() * cols];
        for (e, &i) in idx.iter().enumerate() {
            out[e * cols..(e + 1) * cols].copy_from_slice(&av[i * cols..(i + 1) * cols]);
        }
        self.push(
            out,
            idx.len(),
            cols,
            Op::GatherRows {
                a: a.0,
                idx: idx.to_vec(),
            },
        )
    }

    /// `out[idx[e], :] += a[e, :]` over an output with `n_rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], n_rows: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if rows != idx.len() {
            return Err(Error::ShapeMismatch {
                op: "scatter_add_rows",
                lhs: vec![rows, cols],
                rhs: vec![idx.len(), cols],
            });
        }
        let av = &self.nodes[a.0].data;
        let mut out = vec![0.0; n_rows * cols];
        for (e, &i) in idx.iter().enumerate() {
            debug_assert!(i < n_rows);
            let src = &av[e * cols..(e + 1) * cols];
            let dst = &mut out[i * cols..(i + 1) * cols];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        self.push(
            out,
            n_rows,
            cols,
            Op::ScatterAddRows {
                a: a.0,
                idx: idx.to_vec(),
            },
        )
    }

    /// Pick one element per row: `out[r, 0] = a[r, cols[r]]`.
    pub fn select_per_row(&mut self, a: Var, cols_idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if cols_idx.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "select_per_row",
                lhs: vec![rows, cols],
                rhs: vec![cols_idx.len(), 1],
            });
        }
        let av = &self.nodes[a.0].data;
        let out: Vec<f64> = cols_idx
            .iter()
            .enumerate()
            .map(|(r, &c)| av[r * cols + c])
            .collect();
        self.push(
            out,
            rows,
            1,
            Op::SelectPerRow {
                a: a.0,
                cols: cols_idx.to_vec(),
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        assert!(!parts.is_empty());
        let rows = self.shape(parts[0]).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vec![rows, 0],
                    rhs: vec![r, c],
                });
            }
            total += c;
        }
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for &p in parts {
            let (_, c) = self.shape(p);
            let pv = &self.nodes[p.0].data;
            for r in 0..rows {
                out[r * total + offset..r * total + offset + c]
                    .copy_from_slice(&pv[r * c..(r + 1) * c]);
            }
            offset += c;
        }
        self.push(
            out,
            rows,
            total,
            Op::ConcatCols {
                parts: parts.iter().map(|v| v.0).collect(),
            },
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        let av = &self.nodes[a.0].data;
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = av[r * cols + c];
            }
        }
        self.push(out, cols, rows, Op::Transpose { a: a.0 })
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        if ar * ac != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: vec![ar, ac],
                rhs: vec![rows, cols],
            });
        }
        let data = self.nodes[a.0].data.clone();
        self.push(data, rows, cols, Op::Reshape { a: a.0 })
    }

    /// Forward takes the value of `value_of`; backward passes the output
    /// gradient unchanged to `grad_to` (and nothing to `value_of`).
    pub fn straight_through(&mut self, value_of: Var, grad_to: Var) -> Result<Var> {
        let (vr, vc) = self.shape(value_of);
        let (gr, gc) = self.shape(grad_to);
        if (vr, vc) != (gr, gc) {
            return Err(Error::ShapeMismatch {
                op: "straight_through",
                lhs: vec![vr, vc],
                rhs: vec![gr, gc],
            });
        }
        let data = self.nodes[value_of.0].data.clone();
        self.push(data, vr, vc, Op::StraightThrough { grad_to: grad_to.0 })
    }

    /// Copy of `a` that blocks gradient flow.
    pub fn detach(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        let data = self.nodes[a.0].data.clone();
        self.push(data, rows, cols, Op::Detach)
    }

    /// Reverse pass from a scalar loss. Gradients accumulate across
    /// repeated calls until the tape is dropped.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidTensor("backward on empty tape".into()));
        }
        let (r, c) = self.shape(loss);
        if r != 1 || c != 1 {
            return Err(Error::NonScalarLoss { shape: vec![r, c] });
        }
        // Work buffer for this pass; folded into node grads at the end so
        // repeated backward calls accumulate instead of compounding.
        let mut work: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        work[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let grad = match &work[i] {
                Some(g) => g.clone(),
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf { .. } | Op::Detach => {}
                Op::Matmul { a, b } => {
                    let (m, k) = (self.nodes[a].rows, self.nodes[a].cols);
                    let n = self.nodes[b].cols;
                    // dA = G · Bᵀ
                    let da = matmul_bt(&grad, &self.nodes[b].data, m, n, k);
                    // dB = Aᵀ · G
                    let db = matmul_at(&self.nodes[a].data, &grad, m, k, n);
                    self.accum_work(&mut work, a, &da);
                    self.accum_work(&mut work, b, &db);
                }
                Op::Add { a, b } => {
                    self.accum_work(&mut work, a, &grad);
                    self.accum_reduced_work(&mut work, b, a, &grad, 1.0);
                }
                Op::Sub { a, b } => {
                    self.accum_work(&mut work, a, &grad);
                    self.accum_reduced_work(&mut work, b, a, &grad, -1.0);
                }
                Op::Mul { a, b } => {
                    let da = self.apply_broadcast(a, b, &grad, |g, _x, y| g * y);
                    self.accum_work(&mut work, a, &da);
                    let gb: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[a].data)
                        .map(|(g, x)| g * x)
                        .collect();
                    self.accum_reduced_work(&mut work, b, a, &gb, 1.0);
                }
                Op::Div { a, b } => {
                    let da = self.apply_broadcast(a, b, &grad, |g, _x, y| g / y);
                    self.accum_work(&mut work, a, &da);
                    let gb = {
                        let out = &self.nodes[i].data;
                        let gb_full: Vec<f64> =
                            grad.iter().zip(out).map(|(g, o)| -g * o).collect();
                        self.apply_broadcast(a, b, &gb_full, |g, _x, y| g / y)
                    };
                    self.accum_reduced_work(&mut work, b, a, &gb, 1.0);
                }
                Op::Neg { a } => {
                    let da: Vec<f64> = grad.iter().map(|g| -g).collect();
                    self.accum_work(&mut work, a, &da);
                }
                Op::Exp { a } => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[i].data)
                        .map(|(g, o)| g * o)
                        .collect();
                    self.accum_work(&mut work, a, &da);
                }
                Op::Log { a } => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[a].data)
                        .map(|(g, x)| g / x)
                        .collect();
                    self.accum_work(&mut work, a, &da);
                }
                Op::Tanh { a } => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[i].data)
                        .map(|(g, o)| g * (1.0 - o * o))
                        .collect();
                    self.accum_work(&mut work, a, &da);
                }
                Op::Sigmoid { a } => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[i].data)
                        .map(|(g, o)| g * o * (1.0 - o))
                        .collect();
                    self.accum_work(&mut work, a, &da);
                }
                Op::Softplus { a } => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[a].data)
                        .map(|(g, x)| g * sigmoid(*x))
                        .collect();
                    self.accum_work(&mut work, a, &da);
                }
                Op::AddScalar { a } => self.accum_work(&mut work, a, &grad),
                Op::MulScalar { a, c } => {
                    let da: Vec<f64> = grad.iter().map(|g| g * c).collect();
                    self.accum_work(&mut work, a, &da);
                }
                Op::Maximum { a, b } => {
                    let av = &self.nodes[a].data;
                    let bv = &self.nodes[b].data;
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(av.iter().zip(bv))
                        .map(|(g, (x, y))| if x >= y { *g } else { 0.0 })
                        .collect();
                    let db: Vec<f64> = grad
                        .iter()
                        .zip(av.iter().zip(bv))
                        .map(|(g, (x, y))| if x >= y { 0.0 } else { *g })
                        .collect();
                    self.accum_work(&mut work, a, &da);
                    self.accum_work(&mut work, b, &db);
                }
                Op::MaximumScalar { a, c } => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[a].data)
                        .map(|(g, x)| if *x >= c { *g } else { 0.0 })
                        .collect();
                    self.accum_work(&mut work, a, &da);
                }
                Op::SumAll { a } => {
                    let da = vec![grad[0]; self.nodes[a].data.len()];
                    self.accum_work(&mut work, a, &da);
                }
                Op::MeanAll { a } => {
                    let n = self.nodes[a].data.len() as f64;
                    let da = vec![grad[0] / n; self.nodes[a].data.len()];
                    self.accum_work(&mut work, a, &da);
                }
                Op::RowSum { a } => {
                    let (rows, cols) = (self.nodes[a].rows, self.nodes[a].cols);
                    let mut da = vec![0.0; rows * cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            da[r * cols + c] = grad[r];
                        }
                    }
                    self.accum_work(&mut work, a, &da);
                }
                Op::Softmax { a } => {
                    let (rows, cols) = (self.nodes[i].rows, self.nodes[i].cols);
                    let out = &self.nodes[i].data;
                    let mut da = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let o = &out[r * cols..(r + 1) * cols];
                        let g = &grad[r * cols..(r + 1) * cols];
                        let dot: f64 = o.iter().zip(g).map(|(x, y)| x * y).sum();
                        for c in 0..cols {
                            da[r * cols + c] = (g[c] - dot) * o[c];
                        }
                    }
                    self.accum_work(&mut work, a, &da);
                }
                Op::SegmentSoftmax { a, segments } => {
                    let out = self.nodes[i].data.clone();
                    let mut da = vec![0.0; out.len()];
                    let mut start = 0;
                    while start < out.len() {
                        let seg = segments[start];
                        let mut end = start;
                        while end < out.len() && segments[end] == seg {
                            end += 1;
                        }
                        let dot: f64 = out[start..end]
                            .iter()
                            .zip(&grad[start..end])
                            .map(|(x, y)| x * y)
                            .sum();
                        for k in start..end {
                            da[k] = (grad[k] - dot) * out[k];
                        }
                        start = end;
                    }
                    self.accum_work(&mut work, a, &da);
                }
                Op::GatherRows { a, idx } => {
                    let cols = self.nodes[a].cols;
                    let mut da = vec![0.0; self.nodes[a].data.len()];
                    for (e, &src) in idx.iter().enumerate() {
                        for c in 0..cols {
                            da[src * cols + c] += grad[e * cols + c];
                        }
                    }
                    self.accum_work(&mut work, a, &da);
                }
                Op::ScatterAddRows { a, idx } => {
                    let cols = self.nodes[a].cols;
                    let mut da = vec![0.0; self.nodes[a].data.len()];
                    for (e, &dst) in idx.iter().enumerate() {
                        for c in 0..cols {
                            da[e * cols + c] = grad[dst * cols + c];
                        }
                    }
                    self.accum_work(&mut work, a, &da);
                }
                Op::SelectPerRow { a, cols } => {
                    let width = self.nodes[a].cols;
                    let mut da = vec![0.0; self.nodes[a].data.len()];
                    for (r, &c) in cols.iter().enumerate() {
                        da[r * width + c] += grad[r];
                    }
                    self.accum_work(&mut work, a, &da);
                }
                Op::ConcatCols { parts } => {
                    let total = self.nodes[i].cols;
                    let rows = self.nodes[i].rows;
                    let mut offset = 0;
                    for &p in &parts {
                        let c = self.nodes[p].cols;
                        let mut dp = vec![0.0; rows * c];
                        for r in 0..rows {
                            dp[r * c..(r + 1) * c].copy_from_slice(
                                &grad[r * total + offset..r * total + offset + c],
                            );
                        }
                        self.accum_work(&mut work, p, &dp);
                        offset += c;
                    }
                }
                Op::Reshape { a } => self.accum_work(&mut work, a, &grad),
                Op::Transpose { a } => {
                    let (rows, cols) = (self.nodes[i].rows, self.nodes[i].cols);
                    let mut da = vec![0.0; rows * cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            da[c * rows + r] = grad[r * cols + c];
                        }
                    }
                    self.accum_work(&mut work, a, &da);
                }
                Op::StraightThrough { grad_to } => self.accum_work(&mut work, grad_to, &grad),
            }
        }
        for (node, w) in self.nodes.iter_mut().zip(work) {
            if let Some(w) = w {
                let len = node.data.len();
                let g = node.grad.get_or_insert_with(|| vec![0.0; len]);
                for (gi, v) in g.iter_mut().zip(w) {
                    *gi += v;
                }
            }
        }
        Ok(())
    }

    /// Route parameter-leaf gradients into the store (accumulating).
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let (Op::Leaf { param: Some(id) }, Some(grad)) = (&node.op, &node.grad) {
                store.add_grad(*id, grad);
            }
        }
    }

    fn accum_work(&self, work: &mut [Option<Vec<f64>>], node: usize, grad: &[f64]) {
        let len = self.nodes[node].data.len();
        let g = work[node].get_or_insert_with(|| vec![0.0; len]);
        for (gi, &v) in g.iter_mut().zip(grad) {
            *gi += v;
        }
    }

    /// Accumulate a full-shaped gradient into a possibly broadcast operand.
    fn accum_reduced_work(
        &self,
        work: &mut [Option<Vec<f64>>],
        b: usize,
        a: usize,
        grad: &[f64],
        sign: f64,
    ) {
        let (ar, ac) = (self.nodes[a].rows, self.nodes[a].cols);
        let (br, bc) = (self.nodes[b].rows, self.nodes[b].cols);
        let mut db = vec![0.0; br * bc];
        if (br, bc) == (ar, ac) {
            for (d, &g) in db.iter_mut().zip(grad) {
                *d = sign * g;
            }
        } else if br == 1 && bc == ac {
            for r in 0..ar {
                for c in 0..ac {
                    db[c] += sign * grad[r * ac + c];
                }
            }
        } else if bc == 1 && br == ar {
            for r in 0..ar {
                for c in 0..ac {
                    db[r] += sign * grad[r * ac + c];
                }
            }
        } else {
            db[0] = sign * grad.iter().sum::<f64>();
        }
        self.accum_work(work, b, &db);
    }

    /// Elementwise combine of a full-shaped gradient with the broadcast
    /// right operand, producing a gradient shaped like the left operand.
    fn apply_broadcast(
        &self,
        a: usize,
        b: usize,
        grad: &[f64],
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Vec<f64> {
        let (ar, ac) = (self.nodes[a].rows, self.nodes[a].cols);
        let (br, bc) = (self.nodes[b].rows, self.nodes[b].cols);
        let av = &self.nodes[a].data;
        let bv = &self.nodes[b].data;
        let mut out = vec![0.0; ar * ac];
        if (br, bc) == (ar, ac) {
            for i in 0..out.len() {
                out[i] = f(grad[i], av[i], bv[i]);
            }
        } else if br == 1 && bc == ac {
            for r in 0..ar {
                for c in 0..ac {
                    let i = r * ac + c;
                    out[i] = f(grad[i], av[i], bv[c]);
                }
            }
        } else if bc == 1 && br == ar {
            for r in 0..ar {
                for c in 0..ac {
                    let i = r * ac + c;
                    out[i] = f(grad[i], av[i], bv[r]);
                }
            }
        } else {
            for i in 0..out.len() {
                out[i] = f(grad[i], av[i], bv[0]);
            }
        }
        out
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

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// C[m,n] = A[m,k] · B[k,n]
pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// C[m,k] = G[m,n] · B[k,n]ᵀ
fn matmul_bt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        let c_row = &mut c[i * k..(i + 1) * k];
        for (p, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            *cv = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// C[k,n] = A[m,k]ᵀ · G[m,n]
fn matmul_at(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &gv) in c_row.iter_mut().zip(g_row) {
                *cv += av * gv;
            }
        }
    }
    c
}
