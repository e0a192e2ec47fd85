//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive applied during one forward pass,
//! in execution order, together with its output value. [`Tape::backward`]
//! walks the records once in reverse and accumulates gradients; a value
//! consumed by several ops receives the sum of their contributions.
//!
//! The primitive set is intentionally small. Broadcasting exists only in
//! [`Tape::mul_col`] (a column vector scaling each row); biases are added
//! through a matmul with a ones column instead.

use crate::params::{ParamId, ParamStore};
use crate::tensor::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

/// Primitive kinds, used for diagnostics and the gradient-check fault
/// injection hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    MulCol,
    Relu,
    SoftmaxRows,
    ConcatCols,
    ConcatRows,
    MeanRows,
    Sum,
    Scale,
    AddScalar,
    RowSum,
    Recip,
    Transpose,
}

impl OpKind {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "matmul" => Self::MatMul,
            "add" => Self::Add,
            "sub" => Self::Sub,
            "mul" => Self::Mul,
            "mul_col" => Self::MulCol,
            "relu" => Self::Relu,
            "softmax_rows" => Self::SoftmaxRows,
            "concat_cols" => Self::ConcatCols,
            "concat_rows" => Self::ConcatRows,
            "mean_rows" => Self::MeanRows,
            "sum" => Self::Sum,
            "scale" => Self::Scale,
            "add_scalar" => Self::AddScalar,
            "row_sum" => Self::RowSum,
            "recip" => Self::Recip,
            "transpose" => Self::Transpose,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Relu(Var),
    SoftmaxRows(Var),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    Scale(Var, f64),
    AddScalar(Var),
    RowSum(Var),
    Recip(Var),
    Transpose(Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf(_) => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::MulCol(..) => OpKind::MulCol,
            Op::Relu(_) => OpKind::Relu,
            Op::SoftmaxRows(_) => OpKind::SoftmaxRows,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::MeanRows(_) => OpKind::MeanRows,
            Op::Sum(_) => OpKind::Sum,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::RowSum(_) => OpKind::RowSum,
            Op::Recip(_) => OpKind::Recip,
            Op::Transpose(_) => OpKind::Transpose,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf(_) => Vec::new(),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MulCol(a, b)
            | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::ConcatRows(parts) => parts.clone(),
            Op::Relu(x)
            | Op::SoftmaxRows(x)
            | Op::MeanRows(x)
            | Op::Sum(x)
            | Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::RowSum(x)
            | Op::Recip(x)
            | Op::Transpose(x) => vec![*x],
        }
    }
}

struct Record {
    op: Op,
    value: Tensor,
    /// Whether any parameter leaf feeds this value.
    live: bool,
}

#[derive(Default)]
pub struct Tape {
    records: Vec<Record>,
    fault: Option<OpKind>,
}

/// Gradients produced by one backward pass, indexed by tape position.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for each parameter leaf that the loss depends on.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> + '_ {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.grads[v.0].as_ref().map(|g| (id, g)))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test fixture: every backward rule of `kind` is scaled by 1.5,
    /// which a gradient check must catch.
    #[doc(hidden)]
    pub fn with_fault(kind: OpKind) -> Self {
        Self {
            records: Vec::new(),
            fault: Some(kind),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.records[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite {
                op: kind_name(op.kind()),
            });
        }
        let live = op.inputs().iter().any(|v| self.records[v.0].live);
        self.records.push(Record { op, value, live });
        Ok(Var(self.records.len() - 1))
    }

    /// A value that receives no parameter gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.records.push(Record {
            op: Op::Leaf(None),
            value: t,
            live: false,
        });
        Var(self.records.len() - 1)
    }

    /// A non-parameter leaf whose gradient is still tracked.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.records.push(Record {
            op: Op::Leaf(None),
            value: t,
            live: true,
        });
        Var(self.records.len() - 1)
    }

    /// Records every parameter of `store` as a leaf.
    pub fn bind(&mut self, store: &ParamStore) -> Bound {
        Bound(store.ids().map(|id| self.param(store, id)).collect())
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.records.push(Record {
            op: Op::Leaf(Some(id)),
            value: store.value(id).clone(),
            live: true,
        });
        Var(self.records.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        self.push(Op::Mul(a, b), v)
    }

    /// Scales row `i` of `x` by `col[i]`; `col` must be `rows(x) x 1`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let v = self.value(x).mul_col(self.value(col))?;
        self.push(Op::MulCol(x, col), v)
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(Op::Relu(x), v)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).softmax_rows();
        self.push(Op::SoftmaxRows(x), v)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).concat_cols(self.value(b))?;
        self.push(Op::ConcatCols(a, b), v)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_rows(&vals)?;
        self.push(Op::ConcatRows(parts.to_vec()), v)
    }

    /// Column means, `n x m -> 1 x m`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        if self.value(x).rows() == 0 {
            return Err(TensorError::Invalid("mean_rows of an empty matrix".into()));
        }
        let v = self.value(x).col_means();
        self.push(Op::MeanRows(x), v)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), v)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let v = self.value(x).scale(s);
        self.push(Op::Scale(x, s), v)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a + s);
        self.push(Op::AddScalar(x), v)
    }

    /// Row sums, `n x m -> n x 1`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).row_sums();
        self.push(Op::RowSum(x), v)
    }

    pub fn recip(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| 1.0 / a);
        self.push(Op::Recip(x), v)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).transpose();
        self.push(Op::Transpose(x), v)
    }

    /// Propagates d(loss)/d(value) to every recorded value. `loss` must be
    /// `1 x 1`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(TensorError::NotScalar { shape });
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let rec = &self.records[idx];
            let scale = if self.fault == Some(rec.op.kind()) { 1.5 } else { 1.0 };
            let mut contribs: Vec<(Var, Tensor)> = Vec::with_capacity(2);
            match &rec.op {
                Op::Leaf(_) => {}
                Op::MatMul(a, b) => {
                    if self.records[a.0].live {
                        contribs.push((*a, g.matmul_t(self.value(*b))?));
                    }
                    if self.records[b.0].live {
                        contribs.push((*b, self.value(*a).t_matmul(&g)?));
                    }
                }
                Op::Add(a, b) => {
                    contribs.push((*a, g.clone()));
                    contribs.push((*b, g.clone()));
                }
                Op::Sub(a, b) => {
                    contribs.push((*a, g.clone()));
                    contribs.push((*b, g.scale(-1.0)));
                }
                Op::Mul(a, b) => {
                    contribs.push((*a, g.mul(self.value(*b))?));
                    contribs.push((*b, g.mul(self.value(*a))?));
                }
                Op::MulCol(x, c) => {
                    contribs.push((*x, g.mul_col(self.value(*c))?));
                    contribs.push((*c, g.mul(self.value(*x))?.row_sums()));
                }
                Op::Relu(x) => {
                    let gx = g.zip_with(self.value(*x), "relu_grad", |gv, xv| {
                        if xv > 0.0 {
                            gv
                        } else {
                            0.0
                        }
                    })?;
                    contribs.push((*x, gx));
                }
                Op::SoftmaxRows(x) => {
                    let y = &rec.value;
                    let mut gx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let gr = g.row_slice(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols() {
                            gx.set(r, c, yr[c] * (gr[c] - dot));
                        }
                    }
                    contribs.push((*x, gx));
                }
                Op::ConcatCols(a, b) => {
                    let ac = self.value(*a).cols();
                    let bc = self.value(*b).cols();
                    let mut ga = Tensor::zeros(g.rows(), ac);
                    let mut gb = Tensor::zeros(g.rows(), bc);
                    for r in 0..g.rows() {
                        let row = g.row_slice(r);
                        ga.data_mut()[r * ac..(r + 1) * ac].copy_from_slice(&row[..ac]);
                        gb.data_mut()[r * bc..(r + 1) * bc].copy_from_slice(&row[ac..]);
                    }
                    contribs.push((*a, ga));
                    contribs.push((*b, gb));
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let slice = g.data()[start * cols..(start + rows) * cols].to_vec();
                        contribs.push((p, Tensor::new(rows, cols, slice)?));
                        start += rows;
                    }
                }
                Op::MeanRows(x) => {
                    let rows = self.value(*x).rows();
                    let inv = 1.0 / rows as f64;
                    let mut gx = Tensor::zeros(rows, g.cols());
                    for r in 0..rows {
                        for c in 0..g.cols() {
                            gx.set(r, c, g.get(0, c) * inv);
                        }
                    }
                    contribs.push((*x, gx));
                }
                Op::Sum(x) => {
                    let s = self.value(*x);
                    contribs.push((*x, Tensor::full(s.rows(), s.cols(), g.get(0, 0))));
                }
                Op::Scale(x, s) => contribs.push((*x, g.scale(*s))),
                Op::AddScalar(x) => contribs.push((*x, g.clone())),
                Op::RowSum(x) => {
                    let s = self.value(*x);
                    let mut gx = Tensor::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        for c in 0..s.cols() {
                            gx.set(r, c, g.get(r, 0));
                        }
                    }
                    contribs.push((*x, gx));
                }
                Op::Recip(x) => {
                    let gx = g.zip_with(self.value(*x), "recip_grad", |gv, xv| -gv / (xv * xv))?;
                    contribs.push((*x, gx));
                }
                Op::Transpose(x) => contribs.push((*x, g.transpose())),
            }
            for (target, mut contrib) in contribs {
                if !self.records[target.0].live {
                    continue;
                }
                if scale != 1.0 {
                    contrib = contrib.scale(scale);
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
            // Keep the gradient of leaves so callers can read them.
            if matches!(rec.op, Op::Leaf(_)) {
                grads[idx] = Some(g);
            }
        }

        let params = self.records[..n]
            .iter()
            .enumerate()
            .filter_map(|(i, r)| match r.op {
                Op::Leaf(Some(id)) => Some((id, Var(i))),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

fn kind_name(kind: OpKind) -> &'static str {
    match kind {
        OpKind::Leaf => "leaf",
        OpKind::MatMul => "matmul",
        OpKind::Add => "add",
        OpKind::Sub => "sub",
        OpKind::Mul => "mul",
        OpKind::MulCol => "mul_col",
        OpKind::Relu => "relu",
        OpKind::SoftmaxRows => "softmax_rows",
        OpKind::ConcatCols => "concat_cols",
        OpKind::ConcatRows => "concat_rows",
        OpKind::MeanRows => "mean_rows",
        OpKind::Sum => "sum",
        OpKind::Scale => "scale",
        OpKind::AddScalar => "add_scalar",
        OpKind::RowSum => "row_sum",
        OpKind::Recip => "recip",
        OpKind::Transpose => "transpose",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values_and_dead_gradient() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::row(&[-1.0, 0.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);

        let mut tape = Tape::new();
        let x = tape.variable(Tensor::row(&[-1.0, -2.0, -0.5]));
        let y = tape.relu(x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.wrt(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_sum_gradient_is_outer_product() {
        // loss = sum(W x); dW[i][j] = x[j] for every row i.
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]));
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let x = tape.constant(Tensor::column(&[0.5, -2.0]));
        let y = tape.matmul(wv, x).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        let (id, gw) = grads.params().next().unwrap();
        assert_eq!(id, w);
        for r in 0..3 {
            assert_eq!(gw.row_slice(r), &[0.5, -2.0]);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(TensorError::NotScalar { .. })));
    }

    #[test]
    fn reused_value_accumulates() {
        // loss = sum(x * x) -> d/dx = 2x
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::row(&[1.5, -3.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[3.0, -6.0]);
    }

    #[test]
    fn broadcast_column_multiply() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(2, 2));
        let c = tape.constant(Tensor::column(&[2.0, 3.0]));
        let y = tape.mul_col(x, c).unwrap();
        assert_eq!(tape.value(y), &Tensor::from_rows(&[vec![2.0, 2.0], vec![3.0, 3.0]]));
    }

    #[test]
    fn concat_and_mean() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]));
        let b = tape.constant(Tensor::column(&[3.0, 3.0]));
        let c = tape.concat_cols(a, b).unwrap();
        assert_eq!(tape.value(c).row_slice(0), &[1.0, 2.0, 3.0]);
        let m = tape.mean_rows(c).unwrap();
        assert_eq!(tape.value(m).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&[0.0]));
        assert!(matches!(tape.recip(x), Err(TensorError::NonFinite { .. })));
    }
}
