//! Tape-based reverse-mode differentiation.
//!
//! Every primitive appends one record holding its output value and input
//! handles. Records are only ever appended, so inputs always precede their
//! consumers and [`Tape::backward`] can sweep the tape once in reverse.

use crate::error::{AutodiffError, Result};
use crate::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    Relu(Var),
    Sigmoid(Var),
    RowSoftmax(Var),
    RowMean(Var),
    RowSum(Var),
    MeanAll(Var),
    SumAll(Var),
    Abs(Var),
    Huber(Var, f64),
    Powf(Var, f64),
    RecipOrZero(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
}

#[derive(Debug, Clone)]
struct Record {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive applications plus their gradients after
/// [`Tape::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    records: Vec<Record>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records an input tensor. Gradients are only tracked when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.records[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.records[v.0].requires_grad
    }

    /// Accumulated gradient, `None` before backward or for untracked values.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Accumulated gradient, zero-filled when the value was not reached.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.records.push(Record {
            value,
            op,
            requires_grad,
        });
        Var(self.records.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.records[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.tracked(&[a]);
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.tracked(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.tracked(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.tracked(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var, want: (usize, usize)) -> Result<()> {
        self.value(a).expect_matrix(op)?;
        let sb = self.value(b).shape();
        if sb != [want.0, want.1] {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    /// `a + 1·r`: adds the `1×m` row `r` to every row of the `n×m` matrix `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        self.broadcast_check("add_row", a, r, (1, self.value(a).cols()))?;
        let (av, rv) = (self.value(a), self.value(r));
        let m = av.cols();
        let value = Tensor::from_fn(av.rows(), m, |i, j| av.get(i, j) + rv.data()[j]);
        let rg = self.tracked(&[a, r]);
        Ok(self.push(value, Op::AddRow(a, r), rg))
    }

    /// Multiplies column `j` of `a` by `r[j]`, with `r` of shape `1×m`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        self.broadcast_check("mul_row", a, r, (1, self.value(a).cols()))?;
        let (av, rv) = (self.value(a), self.value(r));
        let value = Tensor::from_fn(av.rows(), av.cols(), |i, j| av.get(i, j) * rv.data()[j]);
        let rg = self.tracked(&[a, r]);
        Ok(self.push(value, Op::MulRow(a, r), rg))
    }

    /// Multiplies row `i` of `a` by `c[i]`, with `c` of shape `n×1`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        self.broadcast_check("mul_col", a, c, (self.value(a).rows(), 1))?;
        let (av, cv) = (self.value(a), self.value(c));
        let value = Tensor::from_fn(av.rows(), av.cols(), |i, j| av.get(i, j) * cv.data()[i]);
        let rg = self.tracked(&[a, c]);
        Ok(self.push(value, Op::MulCol(a, c), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    /// Concatenates rank-2 tensors with equal row counts along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(AutodiffError::InvalidShape {
            shape: vec![],
            len: 0,
        })?;
        let (rows, _) = self.value(first).expect_matrix("concat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).expect_matrix("concat")?;
            if r != rows {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(&[rows, total], data)?;
        let rg = self.tracked(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.value(a).expect_matrix("slice_cols")?;
        if start >= end || end > cols {
            return Err(AutodiffError::SliceOutOfRange {
                start,
                end,
                extent: cols,
            });
        }
        let src = self.value(a);
        let value = Tensor::from_fn(rows, end - start, |i, j| src.get(i, start + j));
        let rg = self.tracked(&[a]);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    /// Rows `start..end` of a rank-2 tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.value(a).expect_matrix("slice_rows")?;
        if start >= end || end > rows {
            return Err(AutodiffError::SliceOutOfRange {
                start,
                end,
                extent: rows,
            });
        }
        let data = self.value(a).data()[start * cols..end * cols].to_vec();
        let value = Tensor::new(&[end - start, cols], data)?;
        let rg = self.tracked(&[a]);
        Ok(self.push(value, Op::SliceRows(a, start), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.value(a).expect_matrix("transpose")?;
        let value = self.value(a).transpose();
        let rg = self.tracked(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    /// Softmax over each row, computed after subtracting the row maximum.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.value(a).expect_matrix("row_softmax")?;
        let src = self.value(a);
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let row = src.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| e / sum));
        }
        let value = Tensor::new(&[rows, cols], data)?;
        let rg = self.tracked(&[a]);
        Ok(self.push(value, Op::RowSoftmax(a), rg))
    }

    /// Mean of each row, shape `n×1`.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.value(a).expect_matrix("row_mean")?;
        let src = self.value(a);
        let data = (0..rows)
            .map(|i| src.row(i).iter().sum::<f64>() / cols as f64)
            .collect();
        let value = Tensor::new(&[rows, 1], data)?;
        let rg = self.tracked(&[a]);
        Ok(self.push(value, Op::RowMean(a), rg))
    }

    /// Sum of each row, shape `n×1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (rows, _) = self.value(a).expect_matrix("row_sum")?;
        let src = self.value(a);
        let data = (0..rows).map(|i| src.row(i).iter().sum()).collect();
        let value = Tensor::new(&[rows, 1], data)?;
        let rg = self.tracked(&[a]);
        Ok(self.push(value, Op::RowSum(a), rg))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let value = Tensor::scalar(src.data().iter().sum::<f64>() / src.numel() as f64);
        let rg = self.tracked(&[a]);
        self.push(value, Op::MeanAll(a), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.tracked(&[a]);
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    /// Elementwise Huber (smooth L1) with threshold `delta`.
    pub fn huber(&mut self, a: Var, delta: f64) -> Var {
        self.unary(a, Op::Huber(a, delta), |r| huber(r, delta))
    }

    /// Elementwise `x^p`; callers keep `x > 0` for non-integer `p`.
    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        self.unary(a, Op::Powf(a, p), |x| x.powf(p))
    }

    /// Elementwise `1/x`, with `0` mapped to `0`.
    pub fn recip_or_zero(&mut self, a: Var) -> Var {
        self.unary(a, Op::RecipOrZero(a), |x| if x == 0.0 { 0.0 } else { 1.0 / x })
    }

    /// Accumulates `d loss / d v` into every tracked record reachable from
    /// `loss`. Earlier gradients on this tape are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.records.len()];
        grads[loss.0] = Some(Tensor::ones(&shape));

        for idx in (0..=loss.0).rev() {
            if !self.records[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.records[idx].value;
        let mut send = |v: Var, contribution: Tensor| {
            if !self.records[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&contribution),
                slot @ None => *slot = Some(contribution),
            }
        };
        match &self.records[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if self.requires_grad(*a) {
                    send(*a, matmul_nt(g.data(), bv.data(), n, m, k));
                }
                if self.requires_grad(*b) {
                    send(*b, matmul_tn(av.data(), g.data(), n, k, m));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                send(*a, g.zip_map(self.value(*b), |x, y| x * y));
                send(*b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::Scale(a, c) => send(*a, g.map(|x| x * c)),
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::Concat(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for p in parts {
                    let width = self.value(*p).cols();
                    let piece = Tensor::from_fn(rows, width, |i, j| g.get(i, offset + j));
                    send(*p, piece);
                    offset += width;
                }
            }
            Op::SliceCols(a, start) => {
                let src = self.value(*a);
                let (start, width) = (*start, g.cols());
                let piece = Tensor::from_fn(src.rows(), src.cols(), |i, j| {
                    if j >= start && j < start + width {
                        g.get(i, j - start)
                    } else {
                        0.0
                    }
                });
                send(*a, piece);
            }
            Op::SliceRows(a, start) => {
                let src = self.value(*a);
                let mut piece = Tensor::zeros(src.shape());
                let cols = src.cols();
                piece.data_mut()[start * cols..start * cols + g.numel()]
                    .copy_from_slice(g.data());
                send(*a, piece);
            }
            Op::Transpose(a) => send(*a, g.transpose()),
            Op::Relu(a) => send(
                *a,
                g.zip_map(self.value(*a), |d, x| if x > 0.0 { d } else { 0.0 }),
            ),
            Op::Sigmoid(a) => send(*a, g.zip_map(out, |d, s| d * s * (1.0 - s))),
            Op::RowSoftmax(a) => {
                let (rows, cols) = (out.rows(), out.cols());
                let mut data = Vec::with_capacity(rows * cols);
                for i in 0..rows {
                    let (s, d) = (out.row(i), g.row(i));
                    let dot: f64 = s.iter().zip(d).map(|(x, y)| x * y).sum();
                    data.extend(s.iter().zip(d).map(|(x, y)| x * (y - dot)));
                }
                send(*a, Tensor::new(&[rows, cols], data).expect("softmax grad shape"));
            }
            Op::RowMean(a) => {
                let src = self.value(*a);
                let cols = src.cols() as f64;
                send(*a, Tensor::from_fn(src.rows(), src.cols(), |i, _| g.get(i, 0) / cols));
            }
            Op::RowSum(a) => {
                let src = self.value(*a);
                send(*a, Tensor::from_fn(src.rows(), src.cols(), |i, _| g.get(i, 0)));
            }
            Op::MeanAll(a) => {
                let src = self.value(*a);
                let d = g.item() / src.numel() as f64;
                send(*a, Tensor::full(src.shape(), d));
            }
            Op::SumAll(a) => send(*a, Tensor::full(self.value(*a).shape(), g.item())),
            Op::Abs(a) => send(
                *a,
                g.zip_map(self.value(*a), |d, x| {
                    if x > 0.0 {
                        d
                    } else if x < 0.0 {
                        -d
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Huber(a, delta) => {
                let delta = *delta;
                send(
                    *a,
                    g.zip_map(self.value(*a), |d, r| {
                        if r.abs() < delta {
                            d * r / delta
                        } else {
                            d * r.signum()
                        }
                    }),
                )
            }
            Op::Powf(a, p) => {
                let p = *p;
                send(*a, g.zip_map(self.value(*a), |d, x| d * p * x.powf(p - 1.0)))
            }
            Op::RecipOrZero(a) => send(
                *a,
                g.zip_map(self.value(*a), |d, x| if x == 0.0 { 0.0 } else { -d / (x * x) }),
            ),
            Op::AddRow(a, r) => {
                send(*a, g.clone());
                if self.requires_grad(*r) {
                    send(*r, column_sums(g, None));
                }
            }
            Op::MulRow(a, r) => {
                let (av, rv) = (self.value(*a), self.value(*r));
                if self.requires_grad(*a) {
                    send(*a, Tensor::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * rv.data()[j]));
                }
                if self.requires_grad(*r) {
                    send(*r, column_sums(g, Some(av)));
                }
            }
            Op::MulCol(a, c) => {
                let (av, cv) = (self.value(*a), self.value(*c));
                if self.requires_grad(*a) {
                    send(*a, Tensor::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * cv.data()[i]));
                }
                if self.requires_grad(*c) {
                    let data = (0..g.rows())
                        .map(|i| g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum())
                        .collect();
                    send(*c, Tensor::new(&[g.rows(), 1], data).expect("mul_col grad shape"));
                }
            }
        }
    }
}

/// Column sums of `g`, or of `g ⊙ w` when `w` is given, as a `1×m` row.
fn column_sums(g: &Tensor, w: Option<&Tensor>) -> Tensor {
    let m = g.cols();
    let mut out = vec![0.0; m];
    for i in 0..g.rows() {
        let row = g.row(i);
        match w {
            Some(w) => out.iter_mut().zip(row.iter().zip(w.row(i))).for_each(|(o, (x, y))| *o += x * y),
            None => out.iter_mut().zip(row).for_each(|(o, x)| *o += x),
        }
    }
    Tensor::new(&[1, m], out).expect("column sums shape")
}

/// Scalar Huber value: `0.5·r²/δ` inside the threshold, `|r| − 0.5·δ` outside.
pub fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() < delta {
        0.5 * r * r / delta
    } else {
        r.abs() - 0.5 * delta
    }
}

/// Forward-only helper used by kernels that need `A·B` without a tape.
pub fn matmul_values(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = a.expect_matrix("matmul")?;
    let (k2, m) = b.expect_matrix("matmul")?;
    if k != k2 {
        return Err(AutodiffError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(matmul_raw(a.data(), b.data(), n, k, m))
}
