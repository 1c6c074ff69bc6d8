//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive applied to its [`Var`]s. A fresh tape is
//! built for each forward pass; [`Tape::backward`] walks it once in reverse
//! insertion order, which is a valid topological order because a node can
//! only reference nodes created before it.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    MulConst(usize, Tensor<T>),
    AddRow(usize, usize),
    RepeatRows(usize, usize),
    Relu(usize),
    SetSoftmax(usize, usize),
    Squashing(usize),
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
    },
    Affine {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    SumProduct(Vec<usize>, usize),
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Tensor<T>,
    },
    Sum(usize),
    Reshape(usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recording of one forward pass.
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

/// Batch statistics produced by a train-mode batch normalization.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance of the batch.
    pub var: Vec<T>,
    pub rows: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
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
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    /// Records a leaf; gradients are tracked when `t.requires_grad()`.
    pub fn leaf(&self, t: Tensor<T>) -> Var<'_, T> {
        let g = t.requires_grad();
        self.push(t, Op::Leaf, g)
    }

    /// Records a trainable leaf.
    pub fn param(&self, t: Tensor<T>) -> Var<'_, T> {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn constant(&self, t: Tensor<T>) -> Var<'_, T> {
        self.leaf(t.with_requires_grad(false))
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    /// Gradients of the scalar `loss` with respect to every recorded node.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: root.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            backprop(&nodes, id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: usize, g: Tensor<T>) {
    match &mut grads[id] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn tensor_like<T: Scalar>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape.to_vec(), data).expect("gradient shape mirrors value shape")
}

fn backprop<T: Scalar>(
    nodes: &[Node<T>],
    id: usize,
    g: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) -> Result<()> {
    let needs = |i: usize| nodes[i].needs_grad;
    let val = |i: usize| &nodes[i].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (val(*a).rows(), val(*a).cols());
            let n = val(*b).cols();
            if needs(*a) {
                let mut da = vec![T::zero(); m * k];
                gemm_nt_acc(g.data(), val(*b).data(), &mut da, m, n, k);
                accumulate(grads, *a, tensor_like(val(*a).shape(), da));
            }
            if needs(*b) {
                let mut db = vec![T::zero(); k * n];
                gemm_tn_acc(val(*a).data(), g.data(), &mut db, k, m, n);
                accumulate(grads, *b, tensor_like(val(*b).shape(), db));
            }
        }
        Op::Transpose(a) => {
            if needs(*a) {
                accumulate(grads, *a, g.transpose()?);
            }
        }
        Op::Add(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g.clone());
            }
            if needs(*b) {
                accumulate(grads, *b, g.clone());
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g.clone());
            }
            if needs(*b) {
                accumulate(grads, *b, g.scale(-T::one()));
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g.hadamard(val(*b))?);
            }
            if needs(*b) {
                accumulate(grads, *b, g.hadamard(val(*a))?);
            }
        }
        Op::Scale(a, c) => {
            if needs(*a) {
                accumulate(grads, *a, g.scale(*c));
            }
        }
        Op::MulConst(a, mask) => {
            if needs(*a) {
                accumulate(grads, *a, g.hadamard(mask)?);
            }
        }
        Op::AddRow(x, b) => {
            if needs(*x) {
                accumulate(grads, *x, g.clone());
            }
            if needs(*b) {
                let d = g.cols();
                let mut db = vec![T::zero(); d];
                for r in 0..g.rows() {
                    for (acc, &v) in db.iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                accumulate(grads, *b, tensor_like(val(*b).shape(), db));
            }
        }
        Op::RepeatRows(y, n) => {
            if needs(*y) {
                let d = g.cols();
                let b = val(*y).rows();
                let mut dy = vec![T::zero(); b * d];
                for blk in 0..b {
                    let acc = &mut dy[blk * d..(blk + 1) * d];
                    for r in blk * n..(blk + 1) * n {
                        for (a, &v) in acc.iter_mut().zip(g.row(r)) {
                            *a += v;
                        }
                    }
                }
                accumulate(grads, *y, tensor_like(val(*y).shape(), dy));
            }
        }
        Op::Relu(x) => {
            if needs(*x) {
                let data = val(*x)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(grads, *x, tensor_like(g.shape(), data));
            }
        }
        Op::SetSoftmax(x, block) => {
            if needs(*x) {
                let y = val(id);
                let (rows, d) = (y.rows(), y.cols());
                let mut dx = vec![T::zero(); rows * d];
                for start in (0..rows).step_by(*block) {
                    for j in 0..d {
                        let mut dot = T::zero();
                        for r in start..start + block {
                            dot += g.data()[r * d + j] * y.data()[r * d + j];
                        }
                        for r in start..start + block {
                            let k = r * d + j;
                            dx[k] = y.data()[k] * (g.data()[k] - dot);
                        }
                    }
                }
                accumulate(grads, *x, tensor_like(g.shape(), dx));
            }
        }
        Op::Squashing(x) => {
            if needs(*x) {
                let v = val(*x);
                let d = v.cols();
                let mut dx = vec![T::zero(); v.numel()];
                for r in 0..v.rows() {
                    let row = v.row(r);
                    let gr = g.row(r);
                    let sq: T = row.iter().fold(T::zero(), |a, &x| a + x * x);
                    if sq == T::zero() {
                        continue;
                    }
                    let norm = sq.sqrt();
                    let denom = T::one() + sq;
                    let s = norm / denom;
                    // s'(r) / r with s(r) = r / (1 + r²)
                    let ds_over_r = (T::one() - sq) / (denom * denom * norm);
                    let vg = row.iter().zip(gr).fold(T::zero(), |a, (&x, &y)| a + x * y);
                    for c in 0..d {
                        dx[r * d + c] = s * gr[c] + ds_over_r * vg * row[c];
                    }
                }
                accumulate(grads, *x, tensor_like(g.shape(), dx));
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let (rows, d) = (xhat.rows(), xhat.cols());
            let gam = val(*gamma).data();
            let mut sum_g = vec![T::zero(); d];
            let mut sum_gx = vec![T::zero(); d];
            for r in 0..rows {
                for j in 0..d {
                    let k = r * d + j;
                    sum_g[j] += g.data()[k];
                    sum_gx[j] += g.data()[k] * xhat.data()[k];
                }
            }
            if needs(*beta) {
                accumulate(grads, *beta, tensor_like(val(*beta).shape(), sum_g.clone()));
            }
            if needs(*gamma) {
                accumulate(grads, *gamma, tensor_like(val(*gamma).shape(), sum_gx.clone()));
            }
            if needs(*x) {
                let n = T::of_usize(rows);
                let mut dx = vec![T::zero(); rows * d];
                for r in 0..rows {
                    for j in 0..d {
                        let k = r * d + j;
                        dx[k] = gam[j] * inv_std[j] / n
                            * (n * g.data()[k] - sum_g[j] - xhat.data()[k] * sum_gx[j]);
                    }
                }
                accumulate(grads, *x, tensor_like(g.shape(), dx));
            }
        }
        Op::Affine {
            x,
            gamma,
            beta,
            mean,
            inv_std,
        } => {
            let xv = val(*x);
            let (rows, d) = (xv.rows(), xv.cols());
            let gam = val(*gamma).data();
            if needs(*beta) || needs(*gamma) {
                let mut sum_g = vec![T::zero(); d];
                let mut sum_gx = vec![T::zero(); d];
                for r in 0..rows {
                    for j in 0..d {
                        let k = r * d + j;
                        sum_g[j] += g.data()[k];
                        sum_gx[j] += g.data()[k] * (xv.data()[k] - mean[j]) * inv_std[j];
                    }
                }
                if needs(*beta) {
                    accumulate(grads, *beta, tensor_like(val(*beta).shape(), sum_g));
                }
                if needs(*gamma) {
                    accumulate(grads, *gamma, tensor_like(val(*gamma).shape(), sum_gx));
                }
            }
            if needs(*x) {
                let mut dx = vec![T::zero(); rows * d];
                for r in 0..rows {
                    for j in 0..d {
                        dx[r * d + j] = g.data()[r * d + j] * gam[j] * inv_std[j];
                    }
                }
                accumulate(grads, *x, tensor_like(g.shape(), dx));
            }
        }
        Op::SumProduct(factors, block) => {
            let widths: Vec<usize> = factors.iter().map(|&f| val(f).cols()).collect();
            let total: usize = widths.iter().product();
            let rows = val(factors[0]).rows();
            for (j, &fj) in factors.iter().enumerate() {
                if !needs(fj) {
                    continue;
                }
                let cj = widths[j];
                let mut dg = vec![T::zero(); rows * cj];
                for i in 0..rows {
                    let b = i / block;
                    let gout = &g.data()[b * total..(b + 1) * total];
                    let left = kron_rows(factors[..j].iter().map(|&f| val(f).row(i)));
                    let right = kron_rows(factors[j + 1..].iter().map(|&f| val(f).row(i)));
                    let rlen = right.len();
                    for (l, &lv) in left.iter().enumerate() {
                        for x in 0..cj {
                            let base = (l * cj + x) * rlen;
                            let mut s = T::zero();
                            for (r, &rv) in right.iter().enumerate() {
                                s += gout[base + r] * rv;
                            }
                            dg[i * cj + x] += lv * s;
                        }
                    }
                }
                accumulate(grads, fj, tensor_like(val(fj).shape(), dg));
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            if needs(*logits) {
                let scale = g.data()[0] / T::of_usize(targets.len());
                let c = probs.cols();
                let mut d = probs.data().to_vec();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * c + t] -= T::one();
                }
                for v in &mut d {
                    *v *= scale;
                }
                accumulate(grads, *logits, tensor_like(probs.shape(), d));
            }
        }
        Op::Sum(x) => {
            if needs(*x) {
                accumulate(grads, *x, Tensor::full(val(*x).shape(), g.data()[0]));
            }
        }
        Op::Reshape(x) => {
            if needs(*x) {
                accumulate(grads, *x, g.reshape(val(*x).shape())?);
            }
        }
    }
    Ok(())
}

/// Row-major Kronecker product of a sequence of vectors; `[1]` when empty.
fn kron_rows<'a, T: Scalar>(rows: impl Iterator<Item = &'a [T]>) -> Vec<T> {
    let mut acc = vec![T::one()];
    for row in rows {
        let mut next = Vec::with_capacity(acc.len() * row.len());
        for &a in &acc {
            for &b in row {
                next.push(a * b);
            }
        }
        acc = next;
    }
    acc
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; zeros when `v` did not influence the loss.
    pub fn wrt(&self, v: Var<'_, T>) -> Tensor<T> {
        self.grads[v.id]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.id]))
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.with_value(self.id, |v| v.clone())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |v| v.shape().to_vec())
    }

    fn unary(self, op: Op<T>, f: impl FnOnce(&Tensor<T>) -> Result<Tensor<T>>) -> Result<Self> {
        let out = self.tape.with_value(self.id, f)?;
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, op, needs))
    }

    fn binary(
        self,
        other: Self,
        op: Op<T>,
        f: impl FnOnce(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(out, op, needs))
    }

    pub fn matmul(self, other: Self) -> Result<Self> {
        self.binary(other, Op::MatMul(self.id, other.id), |a, b| a.matmul(b))
    }

    pub fn transpose(self) -> Result<Self> {
        self.unary(Op::Transpose(self.id), |a| a.transpose())
    }

    pub fn add(self, other: Self) -> Result<Self> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a.add(b))
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a.sub(b))
    }

    pub fn mul(self, other: Self) -> Result<Self> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a.hadamard(b))
    }

    pub fn scale(self, c: T) -> Result<Self> {
        self.unary(Op::Scale(self.id, c), |a| Ok(a.scale(c)))
    }

    /// Entrywise product with a constant tensor (dropout masks).
    pub fn mul_const(self, mask: Tensor<T>) -> Result<Self> {
        let out = self.tape.with_value(self.id, |a| a.hadamard(&mask))?;
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::MulConst(self.id, mask), needs))
    }

    /// Adds the length-`d` vector `bias` to every row of an `R×d` matrix.
    pub fn add_row(self, bias: Self) -> Result<Self> {
        self.binary(bias, Op::AddRow(self.id, bias.id), |x, b| {
            let (r, d) = x.expect_matrix("add_row")?;
            if b.numel() != d {
                return Err(Error::dim("add_row", x.shape(), b.shape()));
            }
            let mut data = x.data().to_vec();
            for i in 0..r {
                for (v, &bv) in data[i * d..(i + 1) * d].iter_mut().zip(b.data()) {
                    *v += bv;
                }
            }
            Tensor::matrix(r, d, data)
        })
    }

    /// Repeats each row `n` times: `B×d` becomes `(B·n)×d`.
    pub fn repeat_rows(self, n: usize) -> Result<Self> {
        self.unary(Op::RepeatRows(self.id, n), |y| {
            let (b, d) = y.expect_matrix("repeat_rows")?;
            let mut data = Vec::with_capacity(b * n * d);
            for r in 0..b {
                for _ in 0..n {
                    data.extend_from_slice(y.row(r));
                }
            }
            Tensor::matrix(b * n, d, data)
        })
    }

    pub fn relu(self) -> Result<Self> {
        self.unary(Op::Relu(self.id), |x| Ok(x.map(|v| v.max(T::zero()))))
    }

    /// Softmax over the set axis, per column, within consecutive blocks of `block` rows.
    pub fn set_softmax(self, block: usize) -> Result<Self> {
        self.unary(Op::SetSoftmax(self.id, block), |x| set_softmax_blocks(x, block))
    }

    /// Row-wise squashing `v ↦ v‖v‖ / (1 + ‖v‖²)`.
    pub fn squashing(self) -> Result<Self> {
        self.unary(Op::Squashing(self.id), |x| Ok(squashing_rows(x)))
    }

    /// Batch normalization using the statistics of this batch.
    pub fn batchnorm_train(self, gamma: Self, beta: Self, eps: T) -> Result<(Self, BatchStats<T>)> {
        let (out, xhat, inv_std, stats) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (rows, d) = x.expect_matrix("batchnorm")?;
            if rows < 2 {
                return Err(Error::DegenerateBatch { rows });
            }
            let gam = &nodes[gamma.id].value;
            let bet = &nodes[beta.id].value;
            if gam.numel() != d || bet.numel() != d {
                return Err(Error::dim("batchnorm", x.shape(), gam.shape()));
            }
            let n = T::of_usize(rows);
            let mut mean = vec![T::zero(); d];
            for r in 0..rows {
                for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![T::zero(); d];
            for r in 0..rows {
                for j in 0..d {
                    let c = x.at(r, j) - mean[j];
                    var[j] += c * c;
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let mut xhat = vec![T::zero(); rows * d];
            let mut out = vec![T::zero(); rows * d];
            for r in 0..rows {
                for j in 0..d {
                    let k = r * d + j;
                    xhat[k] = (x.data()[k] - mean[j]) * inv_std[j];
                    out[k] = gam.data()[j] * xhat[k] + bet.data()[j];
                }
            }
            (
                Tensor::matrix(rows, d, out)?,
                Tensor::matrix(rows, d, xhat)?,
                inv_std,
                BatchStats { mean, var, rows },
            )
        };
        let needs = self.tape.needs(&[self.id, gamma.id, beta.id]);
        let op = Op::BatchNorm {
            x: self.id,
            gamma: gamma.id,
            beta: beta.id,
            xhat,
            inv_std,
        };
        Ok((self.tape.push(out, op, needs), stats))
    }

    /// Batch normalization with fixed statistics (evaluation mode).
    pub fn batchnorm_eval(self, gamma: Self, beta: Self, mean: &[T], var: &[T], eps: T) -> Result<Self> {
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (rows, d) = x.expect_matrix("batchnorm")?;
            let gam = &nodes[gamma.id].value;
            let bet = &nodes[beta.id].value;
            if gam.numel() != d || bet.numel() != d || mean.len() != d || var.len() != d {
                return Err(Error::dim("batchnorm", x.shape(), gam.shape()));
            }
            let mut out = vec![T::zero(); rows * d];
            for r in 0..rows {
                for j in 0..d {
                    let k = r * d + j;
                    out[k] = gam.data()[j] * ((x.data()[k] - mean[j]) * inv_std[j]) + bet.data()[j];
                }
            }
            Tensor::matrix(rows, d, out)?
        };
        let needs = self.tape.needs(&[self.id, gamma.id, beta.id]);
        let op = Op::Affine {
            x: self.id,
            gamma: gamma.id,
            beta: beta.id,
            mean: mean.to_vec(),
            inv_std,
        };
        Ok(self.tape.push(out, op, needs))
    }

    /// Per-block sum of row-wise Kronecker products.
    ///
    /// Every factor is `(B·block)×c_j`. Row `b` of the `B×∏c_j` result is
    /// `Σ_i kron(G_1[i], …, G_n[i])` over the rows `i` of block `b`, summed in
    /// row order and flattened row-major over `(a_1, …, a_n)`.
    pub fn sum_product(factors: &[Self], block: usize) -> Result<Self> {
        let first = *factors
            .first()
            .ok_or_else(|| Error::Precondition("sum_product needs at least one factor".into()))?;
        let tape = first.tape;
        let ids: Vec<usize> = factors.iter().map(|f| f.id).collect();
        let out = {
            let nodes = tape.nodes.borrow();
            let vals: Vec<&Tensor<T>> = ids.iter().map(|&i| &nodes[i].value).collect();
            sum_product_forward(&vals, block)?
        };
        let needs = tape.needs(&ids);
        Ok(tape.push(out, Op::SumProduct(ids, block), needs))
    }

    /// Mean softmax cross-entropy of `B×C` logits against class ids.
    pub fn cross_entropy(self, targets: &[usize]) -> Result<Self> {
        let (loss, probs) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (b, c) = x.expect_matrix("cross_entropy")?;
            if targets.len() != b || b == 0 {
                return Err(Error::dim("cross_entropy", x.shape(), &[targets.len()]));
            }
            if let Some(&t) = targets.iter().find(|&&t| t >= c) {
                return Err(Error::Precondition(format!("target class {t} >= {c} logits")));
            }
            let mut probs = vec![T::zero(); b * c];
            let mut loss = T::zero();
            for r in 0..b {
                let row = x.row(r);
                let m = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
                let mut z = T::zero();
                for &v in row {
                    z += (v - m).exp();
                }
                for (p, &v) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                    *p = (v - m).exp() / z;
                }
                loss += z.ln() + m - row[targets[r]];
            }
            loss /= T::of_usize(b);
            (Tensor::scalar(loss), Tensor::matrix(b, c, probs)?)
        };
        let needs = self.tape.needs(&[self.id]);
        let op = Op::CrossEntropy {
            logits: self.id,
            targets: targets.to_vec(),
            probs,
        };
        Ok(self.tape.push(loss, op, needs))
    }

    pub fn sum(self) -> Result<Self> {
        self.unary(Op::Sum(self.id), |x| Ok(Tensor::scalar(x.sum())))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        self.unary(Op::Reshape(self.id), |x| x.reshape(shape))
    }
}

pub(crate) fn set_softmax_blocks<T: Scalar>(x: &Tensor<T>, block: usize) -> Result<Tensor<T>> {
    let (rows, d) = x.expect_matrix("set_softmax")?;
    if block == 0 || rows % block != 0 {
        return Err(Error::Shape {
            shape: x.shape().to_vec(),
            reason: format!("row count not a multiple of set size {block}"),
        });
    }
    let mut out = vec![T::zero(); rows * d];
    for start in (0..rows).step_by(block) {
        for j in 0..d {
            let mut m = T::neg_infinity();
            for r in start..start + block {
                m = m.max(x.at(r, j));
            }
            let mut z = T::zero();
            for r in start..start + block {
                let e = (x.at(r, j) - m).exp();
                out[r * d + j] = e;
                z += e;
            }
            for r in start..start + block {
                out[r * d + j] /= z;
            }
        }
    }
    Tensor::matrix(rows, d, out)
}

pub(crate) fn squashing_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let d = x.cols();
    let mut out = x.data().to_vec();
    for r in 0..x.rows() {
        let row = &mut out[r * d..(r + 1) * d];
        let sq = row.iter().fold(T::zero(), |a, &v| a + v * v);
        if sq == T::zero() {
            continue;
        }
        let s = sq.sqrt() / (T::one() + sq);
        row.iter_mut().for_each(|v| *v *= s);
    }
    out.shrink_to_fit();
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

pub(crate) fn sum_product_forward<T: Scalar>(factors: &[&Tensor<T>], block: usize) -> Result<Tensor<T>> {
    let rows = factors[0].rows();
    for f in factors {
        f.expect_matrix("sum_product")?;
        if f.rows() != rows {
            return Err(Error::dim("sum_product", factors[0].shape(), f.shape()));
        }
    }
    if block == 0 || rows % block != 0 {
        return Err(Error::Shape {
            shape: factors[0].shape().to_vec(),
            reason: format!("row count not a multiple of set size {block}"),
        });
    }
    let total: usize = factors.iter().map(|f| f.cols()).product();
    let sets = rows / block;
    let mut out = vec![T::zero(); sets * total];
    if factors.len() == 2 {
        let (a, b) = (factors[0], factors[1]);
        let (s, t) = (a.cols(), b.cols());
        for i in 0..rows {
            let acc = &mut out[(i / block) * total..(i / block + 1) * total];
            gemm_acc(a.row(i), b.row(i), acc, s, 1, t);
        }
    } else {
        for i in 0..rows {
            let w = kron_rows(factors.iter().map(|f| f.row(i)));
            let acc = &mut out[(i / block) * total..(i / block + 1) * total];
            for (o, v) in acc.iter_mut().zip(w) {
                *o += v;
            }
        }
    }
    Tensor::matrix(sets, total, out)
}
