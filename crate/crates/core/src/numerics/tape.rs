//! Reverse-mode differentiation over a recorded operation tape.
//!
//! A [`Tape`] owns every intermediate value produced during one forward pass.
//! Operations append nodes and return a [`Var`] handle; [`Tape::backward`]
//! walks the nodes in reverse and accumulates gradients for every node that
//! depends on a trainable leaf. The tape is rebuilt for each forward pass.

use super::tensor::{matmul_a_bt_acc, matmul_at_b_acc, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    StraightThrough(Var),
    Sum(Var),
    MaskedL1 {
        pred: Var,
        target: Var,
        mask: Vec<bool>,
        scale: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Operation tape for one forward pass.
#[derive(Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the differentiated output with respect to `var`.
    /// Nodes that do not influence the output get a zero tensor.
    pub fn get(&self, var: Var) -> Tensor<T> {
        let shape = &self.shapes[var.0];
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable input; gradients are accumulated for it.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Fixed input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, what)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "add", |p, q| p + q)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "sub", |p, q| p - q)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "mul", |p, q| p * q)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// Adds a length-`n` row vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let x = self.value(a);
        let r = self.value(row);
        let (m, n) = x.dims2();
        if r.len() != n {
            return Err(Error::shape(format!(
                "add_row: {:?} + row {:?}",
                x.shape(),
                r.shape()
            )));
        }
        let mut data = x.data().to_vec();
        for i in 0..m {
            for (d, &b) in data[i * n..(i + 1) * n].iter_mut().zip(r.data()) {
                *d = *d + b;
            }
        }
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(value, Op::AddRow(a, row), ng))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|v| v * s);
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| T::one() / (T::one() + (-v).exp()));
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.tanh());
        let ng = self.ng(a);
        self.push(value, Op::Tanh(a), ng)
    }

    /// Row-wise softmax of a rank-2 tensor.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let ng = self.ng(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = x.dims2();
        if start + width > n {
            return Err(Error::shape(format!(
                "slice_cols {start}..{} of {n}",
                start + width
            )));
        }
        let mut data = Vec::with_capacity(m * width);
        for i in 0..m {
            data.extend_from_slice(&x.data()[i * n + start..i * n + start + width]);
        }
        let value = Tensor::new(vec![m, width], data)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::SliceCols(a, start), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = x.dims2();
        if start + count > m {
            return Err(Error::shape(format!(
                "slice_rows {start}..{} of {m}",
                start + count
            )));
        }
        let data = x.data()[start * n..(start + count) * n].to_vec();
        let value = Tensor::new(vec![count, n], data)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::SliceRows(a, start), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_rows of nothing"))?;
        let n = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let x = self.value(p);
            if x.cols() != n {
                return Err(Error::shape("concat_rows: column mismatch"));
            }
            rows += x.rows();
            data.extend_from_slice(x.data());
        }
        let value = Tensor::new(vec![rows, n], data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Forward value `hard`, backward gradient passed unchanged to `soft`.
    pub fn straight_through(&mut self, hard: Tensor<T>, soft: Var) -> Result<Var> {
        same_shape(&hard, self.value(soft), "straight_through")?;
        let ng = self.ng(soft);
        Ok(self.push(hard, Op::StraightThrough(soft), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// `scale · Σ_{rows i with mask[i]} Σ_j |pred_ij − target_ij|`.
    ///
    /// The subgradient at zero residual is zero.
    pub fn masked_l1(&mut self, pred: Var, target: Var, mask: Vec<bool>, scale: T) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        same_shape(p, t, "masked_l1")?;
        let (m, n) = p.dims2();
        if mask.len() != m {
            return Err(Error::shape(format!("mask length {} for {m} rows", mask.len())));
        }
        let mut s = T::zero();
        for i in (0..m).filter(|&i| mask[i]) {
            for j in 0..n {
                s = s + (p.data()[i * n + j] - t.data()[i * n + j]).abs();
            }
        }
        let ng = self.ng(pred) || self.ng(target);
        Ok(self.push(
            Tensor::scalar(s * scale),
            Op::MaskedL1 {
                pred,
                target,
                mask,
                scale,
            },
            ng,
        ))
    }

    /// Back-propagates from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.value(output).len() != 1 {
            return Err(Error::shape("backward needs a scalar output"));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![T::one()]);

        fn acc<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
            slot.get_or_insert_with(|| vec![T::zero(); len])
        }

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let y = node.value.data();
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = av.dims2();
                    let n = bv.cols();
                    if self.ng(*a) {
                        let ga = acc(&mut grads[a.0], m * k);
                        matmul_a_bt_acc(&g, bv.data(), ga, m, n, k);
                    }
                    if self.ng(*b) {
                        let gb = acc(&mut grads[b.0], k * n);
                        matmul_at_b_acc(av.data(), &g, gb, m, k, n);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let negate = matches!(node.op, Op::Sub(..));
                    if self.ng(*a) {
                        let ga = acc(&mut grads[a.0], g.len());
                        ga.iter_mut().zip(&g).for_each(|(d, &v)| *d = *d + v);
                    }
                    if self.ng(*b) {
                        let gb = acc(&mut grads[b.0], g.len());
                        if negate {
                            gb.iter_mut().zip(&g).for_each(|(d, &v)| *d = *d - v);
                        } else {
                            gb.iter_mut().zip(&g).for_each(|(d, &v)| *d = *d + v);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        let bv = self.value(*b).data();
                        let ga = acc(&mut grads[a.0], g.len());
                        for i in 0..g.len() {
                            ga[i] = ga[i] + g[i] * bv[i];
                        }
                    }
                    if self.ng(*b) {
                        let av = self.value(*a).data();
                        let gb = acc(&mut grads[b.0], g.len());
                        for i in 0..g.len() {
                            gb[i] = gb[i] + g[i] * av[i];
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    let n = self.value(*row).len();
                    if self.ng(*a) {
                        let ga = acc(&mut grads[a.0], g.len());
                        ga.iter_mut().zip(&g).for_each(|(d, &v)| *d = *d + v);
                    }
                    if self.ng(*row) {
                        let gr = acc(&mut grads[row.0], n);
                        for chunk in g.chunks(n) {
                            gr.iter_mut().zip(chunk).for_each(|(d, &v)| *d = *d + v);
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let ga = acc(&mut grads[a.0], g.len());
                    ga.iter_mut().zip(&g).for_each(|(d, &v)| *d = *d + v * *s);
                }
                Op::Sigmoid(a) => {
                    let ga = acc(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        ga[i] = ga[i] + g[i] * y[i] * (T::one() - y[i]);
                    }
                }
                Op::Tanh(a) => {
                    let ga = acc(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        ga[i] = ga[i] + g[i] * (T::one() - y[i] * y[i]);
                    }
                }
                Op::SoftmaxRows(a) => {
                    let n = node.value.cols();
                    let ga = acc(&mut grads[a.0], g.len());
                    for (r, (gy, yy)) in g.chunks(n).zip(y.chunks(n)).enumerate() {
                        let dot: T = gy.iter().zip(yy).map(|(&p, &q)| p * q).sum();
                        for j in 0..n {
                            ga[r * n + j] = ga[r * n + j] + yy[j] * (gy[j] - dot);
                        }
                    }
                }
                Op::SliceCols(a, start) => {
                    let src_cols = self.value(*a).cols();
                    let (m, w) = node.value.dims2();
                    let ga = acc(&mut grads[a.0], m * src_cols);
                    for i in 0..m {
                        for j in 0..w {
                            let d = &mut ga[i * src_cols + start + j];
                            *d = *d + g[i * w + j];
                        }
                    }
                }
                Op::SliceRows(a, start) => {
                    let src_len = self.value(*a).len();
                    let n = node.value.cols();
                    let ga = acc(&mut grads[a.0], src_len);
                    let off = start * n;
                    for (i, &v) in g.iter().enumerate() {
                        ga[off + i] = ga[off + i] + v;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.value(*p).len();
                        if self.ng(*p) {
                            let gp = acc(&mut grads[p.0], len);
                            for i in 0..len {
                                gp[i] = gp[i] + g[off + i];
                            }
                        }
                        off += len;
                    }
                }
                Op::StraightThrough(soft) => {
                    let gs = acc(&mut grads[soft.0], g.len());
                    gs.iter_mut().zip(&g).for_each(|(d, &v)| *d = *d + v);
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    let ga = acc(&mut grads[a.0], len);
                    ga.iter_mut().for_each(|d| *d = *d + g[0]);
                }
                Op::MaskedL1 {
                    pred,
                    target,
                    mask,
                    scale,
                } => {
                    let (p, t) = (self.value(*pred), self.value(*target));
                    let n = p.cols();
                    let mut local = vec![T::zero(); p.len()];
                    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                        for j in 0..n {
                            let r = p.data()[i * n + j] - t.data()[i * n + j];
                            local[i * n + j] = if r > T::zero() {
                                g[0] * *scale
                            } else if r < T::zero() {
                                -g[0] * *scale
                            } else {
                                T::zero()
                            };
                        }
                    }
                    if self.ng(*pred) {
                        let gp = acc(&mut grads[pred.0], local.len());
                        gp.iter_mut().zip(&local).for_each(|(d, &v)| *d = *d + v);
                    }
                    if self.ng(*target) {
                        let gt = acc(&mut grads[target.0], local.len());
                        gt.iter_mut().zip(&local).for_each(|(d, &v)| *d = *d - v);
                    }
                }
            }
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (m, n) = x.dims2();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n).take(m) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s = s + *v;
        }
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}
