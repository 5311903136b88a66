//! Reverse-mode differentiation over a dynamically recorded tape.
//!
//! Nodes are appended in evaluation order, so the tape is acyclic and a single
//! reverse sweep visits every node after all of its consumers.

use super::kernels::{self, LinearAttentionCache};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax(Var),
    Sum(Var),
    SelectRow(Var, usize),
    RmsNorm {
        x: Var,
        gain: Var,
        inv: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CausalAttention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<Vec<f64>>,
    },
    LinearAttention {
        q: Var,
        k: Var,
        v: Var,
        cache: Box<LinearAttentionCache>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    if t.ndim() != 2 {
        return Err(Error::invalid(format!(
            "{what}: expected a matrix, got shape {:?}",
            t.shape()
        )));
    }
    Ok((t.rows(), t.cols()))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf (input or parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul lhs")?;
        let (k2, n) = dims2(self.value(b), "matmul rhs")?;
        if k != k2 {
            return Err(Error::invalid(format!("matmul inner dims {k} vs {k2}")));
        }
        let c = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, c)?, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul_bt lhs")?;
        let (n, k2) = dims2(self.value(b), "matmul_bt rhs")?;
        if k != k2 {
            return Err(Error::invalid(format!("matmul_bt inner dims {k} vs {k2}")));
        }
        let c = kernels::matmul_bt(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, c)?, Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a length-`n` vector to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "add_row")?;
        if self.value(row).len() != n {
            return Err(Error::invalid("add_row: row length mismatch"));
        }
        let mut out = self.value(x).clone();
        let r = self.value(row).data();
        for i in 0..m {
            for (o, &b) in out.row_mut(i).iter_mut().zip(r) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let mut out = self.value(a).clone();
        for (o, &y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= y;
        }
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_in_place(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let data = src.data().iter().map(|&x| kernels::gelu(x)).collect();
        let out = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Gelu(a))
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(a), "softmax")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            super::dist::softmax_into(&src[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::Softmax(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let mut s = 0.0;
        for v in self.value(a).data() {
            s += v;
        }
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Row `i` of a matrix as a `[1, n]` matrix.
    pub fn select_row(&mut self, a: Var, i: usize) -> Result<Var> {
        let (m, n) = dims2(self.value(a), "select_row")?;
        if i >= m {
            return Err(Error::invalid(format!("row {i} out of range for {m} rows")));
        }
        let row = self.value(a).row(i).to_vec();
        Ok(self.push(Tensor::matrix(1, n, row)?, Op::SelectRow(a, i)))
    }

    pub fn rmsnorm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "rmsnorm")?;
        if self.value(gain).len() != n {
            return Err(Error::invalid("rmsnorm: gain length mismatch"));
        }
        let (out, inv) = kernels::rmsnorm(self.value(x).data(), self.value(gain).data(), m, n, eps);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::RmsNorm { x, gain, inv }))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = dims2(self.value(table), "gather")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(format!("gather id {bad} >= {rows}")));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(t.row(i));
        }
        Ok(self.push(
            Tensor::matrix(ids.len(), cols, out)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        self.same_shape(q, k, "attention q/k")?;
        self.same_shape(q, v, "attention q/v")?;
        let (t, d) = dims2(self.value(q), "attention")?;
        if heads == 0 || d % heads != 0 {
            return Err(Error::invalid(format!("{d} columns not divisible into {heads} heads")));
        }
        let (out, probs) = kernels::causal_attention(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            t,
            d,
            heads,
        );
        Ok(self.push(
            Tensor::matrix(t, d, out)?,
            Op::CausalAttention { q, k, v, heads, probs },
        ))
    }

    pub fn linear_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        self.same_shape(q, k, "linear attention q/k")?;
        self.same_shape(q, v, "linear attention q/v")?;
        let (t, d) = dims2(self.value(q), "linear attention")?;
        let cache = kernels::linear_attention(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            t,
            d,
        );
        let out = Tensor::matrix(t, d, cache.out.clone())?;
        Ok(self.push(
            out,
            Op::LinearAttention {
                q,
                k,
                v,
                cache: Box::new(cache),
            },
        ))
    }

    /// Mean next-token cross-entropy (nats) of `[t, vocab]` logits.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (t, n) = dims2(self.value(logits), "cross_entropy")?;
        if targets.len() != t || t == 0 {
            return Err(Error::invalid(format!(
                "cross_entropy: {} targets for {t} rows",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= n) {
            return Err(Error::invalid(format!("target {bad} >= vocab {n}")));
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; t * n];
        let mut total = 0.0;
        for i in 0..t {
            let row = &z[i * n..(i + 1) * n];
            super::dist::softmax_into(row, &mut probs[i * n..(i + 1) * n]);
            total += super::dist::log_sum_exp(row) - row[targets[i]];
        }
        let loss = total / t as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::invalid(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    /// Gradient of the scalar `loss` with respect to each of `wrt`.
    ///
    /// `wrt` must be leaves. Leaves that `loss` does not depend on get a zero
    /// gradient.
    pub fn grad(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let grads = self.backward(loss)?;
        Ok(wrt
            .iter()
            .map(|v| {
                grads[v.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()))
            })
            .collect())
    }

    /// Reverse sweep from `loss`. Entry `i` holds the gradient of leaf `i`
    /// when `loss` depends on it; interior gradients are dropped once used.
    pub fn backward(&self, loss: Var) -> Result<Vec<Option<Tensor>>> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "loss must be a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    let da = kernels::matmul_bt(g.data(), bv.data(), m, n, k);
                    let db = kernels::matmul_at(av.data(), g.data(), m, k, n);
                    accumulate(&mut grads, *a, vec![m, k], da);
                    accumulate(&mut grads, *b, vec![k, n], db);
                }
                Op::MatMulBt(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                    let da = kernels::matmul(g.data(), bv.data(), m, n, k);
                    let db = kernels::matmul_at(g.data(), av.data(), m, n, k);
                    accumulate(&mut grads, *a, vec![m, k], da);
                    accumulate(&mut grads, *b, vec![n, k], db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.shape().to_vec(), g.data().to_vec());
                    accumulate(&mut grads, *b, g.shape().to_vec(), g.into_data());
                }
                Op::AddRow(x, row) => {
                    let (m, n) = (g.rows(), g.cols());
                    let mut dr = vec![0.0; n];
                    for i in 0..m {
                        for (d, &v) in dr.iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    let row_shape = self.value(*row).shape().to_vec();
                    accumulate(&mut grads, *row, row_shape, dr);
                    accumulate(&mut grads, *x, vec![m, n], g.into_data());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = g.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                    let db = g.data().iter().zip(av.data()).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads, *a, g.shape().to_vec(), da);
                    accumulate(&mut grads, *b, g.shape().to_vec(), db);
                }
                Op::Scale(a, s) => {
                    let da = g.data().iter().map(|v| v * s).collect();
                    accumulate(&mut grads, *a, g.shape().to_vec(), da);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let da = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(g, &x)| g * kernels::gelu_grad(x))
                        .collect();
                    accumulate(&mut grads, *a, g.shape().to_vec(), da);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let (m, n) = (y.rows(), y.cols());
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        let (yi, gi) = (y.row(i), g.row(i));
                        let inner = kernels::dot(yi, gi);
                        for j in 0..n {
                            da[i * n + j] = yi[j] * (gi[j] - inner);
                        }
                    }
                    accumulate(&mut grads, *a, vec![m, n], da);
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    let n = self.value(*a).len();
                    accumulate(&mut grads, *a, shape, vec![g.data()[0]; n]);
                }
                Op::SelectRow(a, i) => {
                    let src = self.value(*a);
                    let (m, n) = (src.rows(), src.cols());
                    let mut da = vec![0.0; m * n];
                    da[i * n..(i + 1) * n].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, vec![m, n], da);
                }
                Op::RmsNorm { x, gain, inv } => {
                    let xv = self.value(*x);
                    let (m, n) = (xv.rows(), xv.cols());
                    let (dx, dg) =
                        kernels::rmsnorm_backward(xv.data(), self.value(*gain).data(), inv, g.data(), m, n);
                    let gain_shape = self.value(*gain).shape().to_vec();
                    accumulate(&mut grads, *x, vec![m, n], dx);
                    accumulate(&mut grads, *gain, gain_shape, dg);
                }
                Op::Gather { table, ids } => {
                    let tv = self.value(*table);
                    let (rows, cols) = (tv.rows(), tv.cols());
                    let mut dt = vec![0.0; rows * cols];
                    for (r, &id) in ids.iter().enumerate() {
                        for (d, &v) in dt[id * cols..(id + 1) * cols].iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *table, vec![rows, cols], dt);
                }
                Op::CausalAttention { q, k, v, heads, probs } => {
                    let qv = self.value(*q);
                    let (t, d) = (qv.rows(), qv.cols());
                    let (dq, dk, dv) = kernels::causal_attention_backward(
                        qv.data(),
                        self.value(*k).data(),
                        self.value(*v).data(),
                        probs,
                        g.data(),
                        t,
                        d,
                        *heads,
                    );
                    accumulate(&mut grads, *q, vec![t, d], dq);
                    accumulate(&mut grads, *k, vec![t, d], dk);
                    accumulate(&mut grads, *v, vec![t, d], dv);
                }
                Op::LinearAttention { q, k, v, cache } => {
                    let qv = self.value(*q);
                    let (t, d) = (qv.rows(), qv.cols());
                    let (dq, dk, dv) = kernels::linear_attention_backward(
                        qv.data(),
                        self.value(*k).data(),
                        self.value(*v).data(),
                        cache,
                        g.data(),
                        t,
                        d,
                    );
                    accumulate(&mut grads, *q, vec![t, d], dq);
                    accumulate(&mut grads, *k, vec![t, d], dk);
                    accumulate(&mut grads, *v, vec![t, d], dv);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let lv = self.value(*logits);
                    let (t, n) = (lv.rows(), lv.cols());
                    let s = g.data()[0] / t as f64;
                    let mut dz: Vec<f64> = probs.iter().map(|p| p * s).collect();
                    for (i, &y) in targets.iter().enumerate() {
                        dz[i * n + y] -= s;
                    }
                    accumulate(&mut grads, *logits, vec![t, n], dz);
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: Vec<usize>, data: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(&data) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(Tensor::new(shape, data).expect("gradient shape")),
    }
}
