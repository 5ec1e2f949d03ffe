//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles; calling
//! [`Tape::backward`] on a scalar result returns exact gradients for every
//! recorded variable that depends on a trainable leaf.

use std::cell::RefCell;
use std::rc::Rc;

use crate::Scalar;

use super::tensor::{matmul_nt, matmul_raw, matmul_tn};
use super::{NnError, Tensor};

type Index = Rc<[usize]>;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `[N × d] ⊙ [N × 1]`
    MulCol(usize, usize),
    /// `[N × d] ⊙ [d]`
    MulRow(usize, usize),
    /// `[N × d] + [d]`
    AddRow(usize, usize),
    Scale(usize, T),
    Relu(usize),
    LeakyRelu(usize, T),
    Sigmoid(usize),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize),
    PadRows(usize, usize),
    Gather(usize, Index),
    ScatterAdd(usize, Index),
    SegmentSoftmax(usize, Index),
    /// Saves `1 / std` per row.
    LayerNorm(usize, Rc<Vec<f64>>),
    /// Saves the softmax probabilities of the selected rows.
    CrossEntropy {
        logits: usize,
        targets: Index,
        rows: Index,
        probs: Rc<Vec<f64>>,
    },
    SumAll(usize),
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

/// Gradients indexed by variable.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`; zeros if `v` did not influence it.
    pub fn get(&self, v: Var<'_, T>) -> Tensor<T> {
        let shape = self.shapes[v.id].clone();
        match &self.grads[v.id] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

fn mismatch(msg: String) -> NnError {
    NnError::ShapeMismatch(msg)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Gradients of the scalar `loss` with respect to every recorded variable.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>, NnError> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(mismatch(format!(
                "backward needs a scalar, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let out = &node.value;
            {
                let mut acc = |pid: usize, delta: Vec<T>| {
                    if !nodes[pid].needs_grad {
                        return;
                    }
                    match &mut grads[pid] {
                        Some(existing) => {
                            for (e, d) in existing.iter_mut().zip(delta) {
                                *e += d;
                            }
                        }
                        slot => *slot = Some(delta),
                    }
                };
                backprop(&nodes, &node.op, out, &g, &mut acc);
            }
            grads[id] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn backprop<T: Scalar>(
    nodes: &[Node<T>],
    op: &Op<T>,
    out: &Tensor<T>,
    g: &[T],
    acc: &mut dyn FnMut(usize, Vec<T>),
) {
    let val = |id: usize| -> &Tensor<T> { &nodes[id].value };
    match op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if nodes[*a].needs_grad {
                acc(*a, matmul_nt(g, bv.data(), m, n, k));
            }
            if nodes[*b].needs_grad {
                acc(*b, matmul_tn(av.data(), g, m, k, n));
            }
        }
        Op::Add(a, b) => {
            acc(*a, g.to_vec());
            acc(*b, g.to_vec());
        }
        Op::Sub(a, b) => {
            acc(*a, g.to_vec());
            acc(*b, g.iter().map(|&v| -v).collect());
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            acc(*a, g.iter().zip(bv).map(|(&d, &y)| d * y).collect());
            acc(*b, g.iter().zip(av).map(|(&d, &x)| d * x).collect());
        }
        Op::MulCol(a, w) => {
            let (av, wv) = (val(*a), val(*w).data());
            let d = av.cols();
            let mut ga = vec![T::zero(); g.len()];
            let mut gw = vec![T::zero(); wv.len()];
            for r in 0..wv.len() {
                let mut s = 0f64;
                for c in 0..d {
                    let i = r * d + c;
                    ga[i] = g[i] * wv[r];
                    s += g[i].wide() * av.data()[i].wide();
                }
                gw[r] = T::of(s);
            }
            acc(*a, ga);
            acc(*w, gw);
        }
        Op::MulRow(a, w) => {
            let (av, wv) = (val(*a), val(*w).data());
            let d = wv.len();
            let mut ga = vec![T::zero(); g.len()];
            let mut gw = vec![0f64; d];
            for (i, (&gi, &ai)) in g.iter().zip(av.data()).enumerate() {
                ga[i] = gi * wv[i % d];
                gw[i % d] += gi.wide() * ai.wide();
            }
            acc(*a, ga);
            acc(*w, gw.into_iter().map(T::of).collect());
        }
        Op::AddRow(a, b) => {
            let d = val(*b).len();
            let mut gb = vec![0f64; d];
            for (i, &gi) in g.iter().enumerate() {
                gb[i % d] += gi.wide();
            }
            acc(*a, g.to_vec());
            acc(*b, gb.into_iter().map(T::of).collect());
        }
        Op::Scale(a, s) => acc(*a, g.iter().map(|&d| d * *s).collect()),
        Op::Relu(a) => {
            let x = val(*a).data();
            acc(
                *a,
                g.iter()
                    .zip(x)
                    .map(|(&d, &x)| if x > T::zero() { d } else { T::zero() })
                    .collect(),
            );
        }
        Op::LeakyRelu(a, slope) => {
            let x = val(*a).data();
            acc(
                *a,
                g.iter()
                    .zip(x)
                    .map(|(&d, &x)| if x > T::zero() { d } else { d * *slope })
                    .collect(),
            );
        }
        Op::Sigmoid(a) => {
            acc(
                *a,
                g.iter()
                    .zip(out.data())
                    .map(|(&d, &y)| d * y * (T::one() - y))
                    .collect(),
            );
        }
        Op::ConcatCols(parts) => {
            let total = out.cols();
            let rows = out.rows();
            let mut offset = 0;
            for &p in parts {
                let w = val(p).cols();
                if nodes[p].needs_grad {
                    let mut gp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    acc(p, gp);
                }
                offset += w;
            }
        }
        Op::SliceRows(a, start) => {
            let av = val(*a);
            let c = av.cols();
            let mut ga = vec![T::zero(); av.len()];
            ga[start * c..start * c + g.len()].copy_from_slice(g);
            acc(*a, ga);
        }
        Op::PadRows(a, before) => {
            let c = out.cols();
            acc(*a, g[before * c..].to_vec());
        }
        Op::Gather(a, idx) => {
            let av = val(*a);
            let c = av.cols();
            let mut ga = vec![T::zero(); av.len()];
            for (k, &src) in idx.iter().enumerate() {
                for j in 0..c {
                    ga[src * c + j] += g[k * c + j];
                }
            }
            acc(*a, ga);
        }
        Op::ScatterAdd(a, idx) => {
            let c = out.cols();
            let mut ga = Vec::with_capacity(idx.len() * c);
            for &dst in idx.iter() {
                ga.extend_from_slice(&g[dst * c..(dst + 1) * c]);
            }
            acc(*a, ga);
        }
        Op::SegmentSoftmax(a, seg) => {
            let y = out.data();
            let segments = seg.iter().copied().max().map_or(0, |m| m + 1);
            let mut dot = vec![0f64; segments];
            for (e, &s) in seg.iter().enumerate() {
                dot[s] += g[e].wide() * y[e].wide();
            }
            acc(
                *a,
                seg.iter()
                    .enumerate()
                    .map(|(e, &s)| T::of(y[e].wide() * (g[e].wide() - dot[s])))
                    .collect(),
            );
        }
        Op::LayerNorm(a, rstd) => {
            let d = out.cols();
            let y = out.data();
            let mut ga = vec![T::zero(); y.len()];
            for (r, &rs) in rstd.iter().enumerate() {
                let gr = &g[r * d..(r + 1) * d];
                let yr = &y[r * d..(r + 1) * d];
                let mean_g: f64 = gr.iter().map(|v| v.wide()).sum::<f64>() / d as f64;
                let mean_gy: f64 = gr.iter().zip(yr).map(|(a, b)| a.wide() * b.wide()).sum::<f64>() / d as f64;
                for c in 0..d {
                    ga[r * d + c] = T::of(rs * (gr[c].wide() - mean_g - yr[c].wide() * mean_gy));
                }
            }
            acc(*a, ga);
        }
        Op::CrossEntropy {
            logits,
            targets,
            rows,
            probs,
        } => {
            let lv = val(*logits);
            let classes = lv.cols();
            let scale = g[0].wide() / rows.len() as f64;
            let mut gl = vec![T::zero(); lv.len()];
            for (k, &r) in rows.iter().enumerate() {
                for c in 0..classes {
                    let onehot = if targets[k] == c { 1.0 } else { 0.0 };
                    gl[r * classes + c] += T::of(scale * (probs[k * classes + c] - onehot));
                }
            }
            acc(*logits, gl);
        }
        Op::SumAll(a) => acc(*a, vec![g[0]; val(*a).len()]),
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn unary(&self, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        self.tape.push(value, op, self.tape.needs(self.id))
    }

    fn binary(&self, other: Var<'t, T>, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        let needs = self.tape.needs(self.id) || self.tape.needs(other.id);
        self.tape.push(value, op, needs)
    }

    pub fn matmul(&self, other: Var<'t, T>) -> Result<Var<'t, T>, NnError> {
        let (a, b) = (self.value(), other.value());
        if a.cols() != b.rows() || b.shape().len() != 2 {
            return Err(mismatch(format!("matmul {:?} · {:?}", a.shape(), b.shape())));
        }
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let v = Tensor::matrix(m, n, matmul_raw(a.data(), b.data(), m, k, n))?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    fn zip_same(&self, other: Var<'t, T>, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, NnError> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(mismatch(format!("{what} {:?} vs {:?}", a.shape(), b.shape())));
        }
        Tensor::new(
            a.shape().to_vec(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    pub fn add(&self, other: Var<'t, T>) -> Result<Var<'t, T>, NnError> {
        let v = self.zip_same(other, "add", |x, y| x + y)?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'t, T>) -> Result<Var<'t, T>, NnError> {
        let v = self.zip_same(other, "sub", |x, y| x - y)?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: Var<'t, T>) -> Result<Var<'t, T>, NnError> {
        let v = self.zip_same(other, "mul", |x, y| x * y)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    /// Scales row `r` by `w[r]`; `w` has one entry per row.
    pub fn mul_col(&self, w: Var<'t, T>) -> Result<Var<'t, T>, NnError> {
        let (a, wv) = (self.value(), w.value());
        if wv.len() != a.rows() {
            return Err(mismatch(format!("mul_col {:?} by {:?}", a.shape(), wv.shape())));
        }
        let d = a.cols();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * wv.data()[i / d.max(1)])
            .collect();
        let v = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.binary(w, v, Op::MulCol(self.id, w.id)))
    }

    /// Multiplies column `c` by `w[c]`.
    pub fn mul_row(&self, w: Var<'t, T>) -> Result<Var<'t, T>, NnError> {
        let (a, wv) = (self.value(), w.value());
        if wv.len() != a.cols() {
            return Err(mismatch(format!("mul_row {:?} by {:?}", a.shape(), wv.shape())));
        }
        let d = a.cols();
        let data = a.data().iter().enumerate().map(|(i, &x)| x * wv.data()[i % d]).collect();
        let v = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.binary(w, v, Op::MulRow(self.id, w.id)))
    }

    /// Adds `b[c]` to column `c` of every row.
    pub fn add_row(&self, b: Var<'t, T>) -> Result<Var<'t, T>, NnError> {
        let (a, bv) = (self.value(), b.value());
        if bv.len() != a.cols() {
            return Err(mismatch(format!("add_row {:?} by {:?}", a.shape(), bv.shape())));
        }
        let d = a.cols();
        let data = a.data().iter().enumerate().map(|(i, &x)| x + bv.data()[i % d]).collect();
        let v = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.binary(b, v, Op::AddRow(self.id, b.id)))
    }

    pub fn scale(&self, s: T) -> Var<'t, T> {
        let a = self.value();
        let v = Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| x * s).collect()).expect("same shape");
        self.unary(v, Op::Scale(self.id, s))
    }

    fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        let a = self.value();
        Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    /// Rectifier; the subgradient at 0 is 0.
    pub fn relu(&self) -> Var<'t, T> {
        let v = self.map(|x| if x > T::zero() { x } else { T::zero() });
        self.unary(v, Op::Relu(self.id))
    }

    pub fn leaky_relu(&self, slope: T) -> Var<'t, T> {
        let v = self.map(|x| if x > T::zero() { x } else { x * slope });
        self.unary(v, Op::LeakyRelu(self.id, slope))
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        let v = self.map(|x| T::one() / (T::one() + (-x).exp()));
        self.unary(v, Op::Sigmoid(self.id))
    }

    pub fn sum_all(&self) -> Var<'t, T> {
        let s: f64 = self.value().data().iter().map(|v| v.wide()).sum();
        self.unary(Tensor::scalar(T::of(s)), Op::SumAll(self.id))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(parts: &[Var<'t, T>]) -> Result<Var<'t, T>, NnError> {
        let first = parts.first().ok_or_else(|| mismatch("concat of nothing".into()))?;
        let tape = first.tape;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let rows = values[0].rows();
        if values.iter().any(|v| v.rows() != rows) {
            return Err(mismatch("concat_cols row counts differ".into()));
        }
        let total: usize = values.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        let needs = parts.iter().any(|p| tape.needs(p.id));
        Ok(tape.push(
            Tensor::matrix(rows, total, data)?,
            Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
            needs,
        ))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var<'t, T>, NnError> {
        let a = self.value();
        if start + len > a.rows() {
            return Err(mismatch(format!("slice rows {start}..{} of {}", start + len, a.rows())));
        }
        let c = a.cols();
        let v = Tensor::matrix(len, c, a.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.unary(v, Op::SliceRows(self.id, start)))
    }

    /// Prepends `before` rows of zeros.
    pub fn pad_rows(&self, before: usize) -> Var<'t, T> {
        let a = self.value();
        let c = a.cols();
        let mut data = vec![T::zero(); before * c];
        data.extend_from_slice(a.data());
        let v = Tensor::matrix(before + a.rows(), c, data).expect("padded shape");
        self.unary(v, Op::PadRows(self.id, before))
    }

    /// Row `k` of the result is row `idx[k]` of `self`.
    pub fn gather_rows(&self, idx: Index) -> Result<Var<'t, T>, NnError> {
        let a = self.value();
        let c = a.cols();
        if idx.iter().any(|&i| i >= a.rows()) {
            return Err(mismatch(format!("gather index out of {} rows", a.rows())));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            data.extend_from_slice(a.row(i));
        }
        let v = Tensor::matrix(idx.len(), c, data)?;
        Ok(self.unary(v, Op::Gather(self.id, idx)))
    }

    /// Sums row `k` of `self` into row `idx[k]` of an `out_rows`-row result.
    pub fn scatter_add_rows(&self, idx: Index, out_rows: usize) -> Result<Var<'t, T>, NnError> {
        let a = self.value();
        if idx.len() != a.rows() || idx.iter().any(|&i| i >= out_rows) {
            return Err(mismatch(format!(
                "scatter of {} rows with {} indices into {out_rows}",
                a.rows(),
                idx.len()
            )));
        }
        let c = a.cols();
        let mut acc = vec![0f64; out_rows * c];
        for (k, &dst) in idx.iter().enumerate() {
            for (o, &x) in acc[dst * c..(dst + 1) * c].iter_mut().zip(a.row(k)) {
                *o += x.wide();
            }
        }
        let v = Tensor::matrix(out_rows, c, acc.into_iter().map(T::of).collect())?;
        Ok(self.unary(v, Op::ScatterAdd(self.id, idx)))
    }

    /// Softmax of a column vector within groups sharing the same `segment` id.
    pub fn segment_softmax(&self, segment: Index) -> Result<Var<'t, T>, NnError> {
        let a = self.value();
        if a.cols() != 1 || a.rows() != segment.len() {
            return Err(mismatch(format!(
                "segment_softmax over {:?} with {} segment ids",
                a.shape(),
                segment.len()
            )));
        }
        let segments = segment.iter().copied().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; segments];
        for (e, &s) in segment.iter().enumerate() {
            max[s] = max[s].max(a.data()[e].wide());
        }
        let exps: Vec<f64> = segment
            .iter()
            .enumerate()
            .map(|(e, &s)| (a.data()[e].wide() - max[s]).exp())
            .collect();
        let mut sums = vec![0f64; segments];
        for (e, &s) in segment.iter().enumerate() {
            sums[s] += exps[e];
        }
        let data = segment.iter().enumerate().map(|(e, &s)| T::of(exps[e] / sums[s])).collect();
        let v = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.unary(v, Op::SegmentSoftmax(self.id, segment)))
    }

    /// Normalizes every row to zero mean and unit variance (biased, `eps`-regularized).
    pub fn layer_norm(&self, eps: f64) -> Var<'t, T> {
        let a = self.value();
        let d = a.cols();
        let mut rstd = Vec::with_capacity(a.rows());
        let mut data = Vec::with_capacity(a.len());
        for r in 0..a.rows() {
            let row = a.row(r);
            let mean = row.iter().map(|v| v.wide()).sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v.wide() - mean).powi(2)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd.push(rs);
            data.extend(row.iter().map(|v| T::of((v.wide() - mean) * rs)));
        }
        let v = Tensor::new(a.shape().to_vec(), data).expect("same shape");
        self.unary(v, Op::LayerNorm(self.id, Rc::new(rstd)))
    }

    /// Mean negative log-softmax of `targets[k]` over the selected `rows[k]`.
    pub fn cross_entropy(&self, targets: Index, rows: Index) -> Result<Var<'t, T>, NnError> {
        let l = self.value();
        if rows.is_empty() {
            return Err(NnError::EmptyMask);
        }
        let classes = l.cols();
        if targets.len() != rows.len() || rows.iter().any(|&r| r >= l.rows()) || targets.iter().any(|&t| t >= classes) {
            return Err(mismatch("cross_entropy targets/rows do not fit logits".into()));
        }
        let mut probs = Vec::with_capacity(rows.len() * classes);
        let mut loss = 0f64;
        for (k, &r) in rows.iter().enumerate() {
            let row = l.row(r);
            let max = row.iter().map(|v| v.wide()).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v.wide() - max).exp()).sum();
            let log_z = max + z.ln();
            loss += log_z - row[targets[k]].wide();
            probs.extend(row.iter().map(|v| (v.wide() - log_z).exp()));
        }
        let v = Tensor::scalar(T::of(loss / rows.len() as f64));
        Ok(self.unary(
            v,
            Op::CrossEntropy {
                logits: self.id,
                targets,
                rows,
                probs: Rc::new(probs),
            },
        ))
    }
}
