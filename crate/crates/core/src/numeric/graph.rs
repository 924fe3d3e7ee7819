//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass as a node. Nodes
//! are appended in evaluation order, so walking the tape backwards visits
//! each node after all of its consumers. Leaves created with
//! [`Graph::param`] (or from a tensor flagged `requires_grad`) collect
//! gradients across repeated [`Graph::backward`] calls; intermediate
//! gradients are recomputed from scratch on every call.

use crate::error::{Error, Result};
use crate::numeric::tensor::Tensor;

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn node_id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Concat(Var, Var),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    /// Accumulated gradient of a requires-grad leaf.
    grad: Option<Vec<f64>>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf holding a copy of `t`; it tracks gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let requires_grad = t.requires_grad();
        let value = t.clone().with_requires_grad(false);
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that tracks gradients regardless of the tensor's flag.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let value = t.clone().with_requires_grad(false);
        self.push(value, true, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, `None` until a backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Adds the leaf gradient of `v` into `target`'s gradient buffer. A leaf
    /// that backward never reached contributes zeros.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor) -> Result<()> {
        match self.grad(v) {
            Some(g) => target.accumulate_grad(g),
            None => target.accumulate_grad(&vec![0.0; target.len()]),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.ensure_matrix("matmul")?;
        tb.ensure_matrix("matmul")?;
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (k2, n) = (tb.shape()[0], tb.shape()[1]);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul of {:?} and {:?}: inner dimensions differ",
                ta.shape(),
                tb.shape()
            )));
        }
        let out = matmul_raw(ta.values(), tb.values(), m, k, n);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, rg, Op::MatMul(a, b)))
    }

    /// Adds a `1 × n` row vector to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        ta.ensure_matrix("add_row")?;
        let n = ta.cols();
        if tr.len() != n {
            return Err(Error::Shape(format!(
                "add_row of {:?} and row {:?}",
                ta.shape(),
                tr.shape()
            )));
        }
        let r = tr.values();
        let mut out = ta.values().to_vec();
        for chunk in out.chunks_mut(n.max(1)) {
            for (o, b) in chunk.iter_mut().zip(r) {
                *o += b;
            }
        }
        let shape = ta.shape().to_vec();
        let rg = self.needs(a) || self.needs(row);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::AddRow(a, row)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{} of {:?} and {:?}", what, sa, sb)));
        }
        Ok(())
    }

    fn zip_op(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let out: Vec<f64> = ta.values().iter().zip(tb.values()).map(|(x, y)| f(*x, *y)).collect();
        let shape = ta.shape().to_vec();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, rg, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a);
        let out: Vec<f64> = t.values().iter().map(|x| x * factor).collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let rg = self.needs(a);
        self.push(value, rg, Op::Scale(a, factor))
    }

    /// Elementwise `max(0, x)`; the gradient at exactly zero is zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out: Vec<f64> = t.values().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let rg = self.needs(a);
        self.push(value, rg, Op::Relu(a))
    }

    /// Column-wise concatenation `[a ∥ b]` of two matrices with equal row counts.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.ensure_matrix("concat")?;
        tb.ensure_matrix("concat")?;
        let m = ta.rows();
        if tb.rows() != m {
            return Err(Error::Shape(format!(
                "concat of {:?} and {:?}: row counts differ",
                ta.shape(),
                tb.shape()
            )));
        }
        let (d1, d2) = (ta.cols(), tb.cols());
        let mut out = Vec::with_capacity(m * (d1 + d2));
        for i in 0..m {
            out.extend_from_slice(&ta.values()[i * d1..(i + 1) * d1]);
            out.extend_from_slice(&tb.values()[i * d2..(i + 1) * d2]);
        }
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, d1 + d2], out)?, rg, Op::Concat(a, b)))
    }

    /// Matrix whose i-th row is row `indices[i]` of `a`. Gradients scatter-add
    /// back into the source rows.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        t.ensure_matrix("gather_rows")?;
        let rows = t.rows();
        if let Some((pos, &bad)) = indices.iter().enumerate().find(|(_, &i)| i >= rows) {
            return Err(Error::Index(format!(
                "gather_rows: index {} at position {} out of range for {} rows",
                bad, pos, rows
            )));
        }
        let out = t.select_rows(indices);
        let rg = self.needs(a);
        Ok(self.push(out, rg, Op::GatherRows(a, indices.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).values().iter().sum();
        let rg = self.needs(a);
        self.push(Tensor::scalar(s), rg, Op::Sum(a))
    }

    /// Mean over rows of `-log softmax(logits)[label]`, stabilised by
    /// subtracting each row's maximum before exponentiating.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        t.ensure_matrix("softmax_cross_entropy")?;
        let (m, c) = (t.rows(), t.cols());
        if labels.len() != m {
            return Err(Error::Shape(format!(
                "softmax_cross_entropy: {} labels for {} rows",
                labels.len(),
                m
            )));
        }
        if m == 0 {
            return Err(Error::Contract("softmax_cross_entropy on an empty batch".into()));
        }
        if let Some((row, &bad)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
            return Err(Error::Index(format!(
                "label {} at row {} out of range for {} classes",
                bad, row, c
            )));
        }
        let probs = softmax_rows(t.values(), m, c);
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &t.values()[i * c..(i + 1) * c];
            loss += log_sum_exp(row) - row[label];
        }
        loss /= m as f64;
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse pass from a scalar `loss`. Leaf gradients accumulate across
    /// calls; nothing else is retained between calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Contract("loss does not belong to this graph".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    let acc = self.nodes[id].grad.get_or_insert_with(|| vec![0.0; g.len()]);
                    for (a, d) in acc.iter_mut().zip(&g) {
                        *a += d;
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    if self.nodes[a.0].requires_grad {
                        // g · bᵀ
                        let mut da = vec![0.0; m * k];
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i * n + j] * tb.values()[p * n + j];
                                }
                                da[i * k + p] = s;
                            }
                        }
                        add_into(&mut grads, *a, da);
                    }
                    if self.nodes[b.0].requires_grad {
                        // aᵀ · g
                        let mut db = vec![0.0; k * n];
                        for i in 0..m {
                            for p in 0..k {
                                let av = ta.values()[i * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    db[p * n + j] += av * g[i * n + j];
                                }
                            }
                        }
                        add_into(&mut grads, *b, db);
                    }
                }
                Op::AddRow(a, row) => {
                    let n = self.nodes[a.0].value.cols();
                    if self.nodes[row.0].requires_grad {
                        let mut dr = vec![0.0; n];
                        for chunk in g.chunks(n.max(1)) {
                            for (d, v) in dr.iter_mut().zip(chunk) {
                                *d += v;
                            }
                        }
                        add_into(&mut grads, *row, dr);
                    }
                    if self.nodes[a.0].requires_grad {
                        add_into(&mut grads, *a, g);
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[b.0].requires_grad {
                        add_into(&mut grads, b, g.clone());
                    }
                    if self.nodes[a.0].requires_grad {
                        add_into(&mut grads, a, g);
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[b.0].requires_grad {
                        add_into(&mut grads, b, g.iter().map(|v| -v).collect());
                    }
                    if self.nodes[a.0].requires_grad {
                        add_into(&mut grads, a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (va, vb) = (self.nodes[a.0].value.values(), self.nodes[b.0].value.values());
                    if self.nodes[a.0].requires_grad {
                        let da = g.iter().zip(vb).map(|(g, y)| g * y).collect();
                        add_into(&mut grads, a, da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let db = g.iter().zip(va).map(|(g, x)| g * x).collect();
                        add_into(&mut grads, b, db);
                    }
                }
                Op::Scale(a, factor) => {
                    let da = g.iter().map(|v| v * factor).collect();
                    add_into(&mut grads, *a, da);
                }
                Op::Relu(a) => {
                    let x = self.nodes[a.0].value.values();
                    let da = g
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    add_into(&mut grads, *a, da);
                }
                Op::Concat(a, b) => {
                    let (a, b) = (*a, *b);
                    let d1 = self.nodes[a.0].value.cols();
                    let d2 = self.nodes[b.0].value.cols();
                    let m = self.nodes[a.0].value.rows();
                    let w = d1 + d2;
                    if self.nodes[a.0].requires_grad {
                        let mut da = Vec::with_capacity(m * d1);
                        for i in 0..m {
                            da.extend_from_slice(&g[i * w..i * w + d1]);
                        }
                        add_into(&mut grads, a, da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let mut db = Vec::with_capacity(m * d2);
                        for i in 0..m {
                            db.extend_from_slice(&g[i * w + d1..(i + 1) * w]);
                        }
                        add_into(&mut grads, b, db);
                    }
                }
                Op::GatherRows(a, indices) => {
                    let src = &self.nodes[a.0].value;
                    let n = src.cols();
                    let mut da = vec![0.0; src.len()];
                    for (i, &r) in indices.iter().enumerate() {
                        for j in 0..n {
                            da[r * n + j] += g[i * n + j];
                        }
                    }
                    add_into(&mut grads, *a, da);
                }
                Op::Sum(a) => {
                    let len = self.nodes[a.0].value.len();
                    add_into(&mut grads, *a, vec![g[0]; len]);
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    let c = self.nodes[logits.0].value.cols();
                    let m = labels.len();
                    let scale = g[0] / m as f64;
                    let mut dl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (i, &label) in labels.iter().enumerate() {
                        dl[i * c + label] -= scale;
                    }
                    add_into(&mut grads, *logits, dl);
                }
            }
        }
        Ok(())
    }
}

fn add_into(grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(&delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Row-wise softmax of an `m × c` matrix.
pub fn softmax_rows(values: &[f64], m: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * c];
    for i in 0..m {
        let row = &values[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (o, x) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
            *o = (x - max).exp();
            total += *o;
        }
        out[i * c..(i + 1) * c].iter_mut().for_each(|o| *o /= total);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_by_hand() {
        let mut g = Graph::new();
        let a = g.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = g.constant(mat(&[&[5.0], &[6.0]]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).values(), &[17.0, 39.0]);
        assert_eq!(g.value(c).shape(), &[2, 1]);
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = mat(&[&[0.3, -1.2], &[4.5, 2.0]]);
        let mut g = Graph::new();
        let i2 = g.constant(mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let av = g.constant(a.clone());
        let out = g.matmul(i2, av).unwrap();
        assert_eq!(g.value(out).values(), a.values());

        let z = g.constant(Tensor::zeros(vec![2, 2]));
        let out = g.matmul(z, av).unwrap();
        assert!(g.value(out).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("inner"), "{err}");
    }

    #[test]
    fn matmul_backward_shapes() {
        let mut g = Graph::new();
        let a = g.param(&Tensor::full(vec![3, 4], 0.5));
        let b = g.param(&Tensor::full(vec![4, 2], -0.25));
        let c = g.matmul(a, b).unwrap();
        let s = g.sum(c);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap().len(), 12);
        assert_eq!(g.grad(b).unwrap().len(), 8);
        // d sum / d a_ip = sum_j b_pj
        assert!(g.grad(a).unwrap().iter().all(|&v| v == -0.5));
        // d sum / d b_pj = sum_i a_ip
        assert!(g.grad(b).unwrap().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn relu_forward_and_mask() {
        let mut g = Graph::new();
        let x = g.param(&mat(&[&[-1.0, 0.0, 2.0]]));
        let y = g.relu(x);
        assert_eq!(g.value(y).values(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0]);

        let mut g = Graph::new();
        let x = g.constant(mat(&[&[0.5, 3.0]]));
        let y = g.relu(x);
        assert_eq!(g.value(y).values(), &[0.5, 3.0]);
    }

    #[test]
    fn concat_shapes_and_backward() {
        let mut g = Graph::new();
        let a = g.param(&Tensor::full(vec![3, 2], 1.0));
        let b = g.param(&Tensor::full(vec![3, 4], 2.0));
        let c = g.concat(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[3, 6]);
        assert_eq!(g.value(c).row(1), &[1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        let s = g.sum(c);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0; 6]);
        assert_eq!(g.grad(b).unwrap(), &[1.0; 12]);
    }

    #[test]
    fn concat_with_empty_block_is_identity() {
        let x = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let mut g = Graph::new();
        let a = g.constant(x.clone());
        let e = g.constant(Tensor::zeros(vec![2, 0]));
        let c = g.concat(a, e).unwrap();
        assert_eq!(g.value(c), &x);
    }

    #[test]
    fn concat_row_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![3, 2]));
        let b = g.constant(Tensor::zeros(vec![2, 2]));
        assert!(matches!(g.concat(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn cross_entropy_values() {
        let mut g = Graph::new();
        let l = g.constant(mat(&[&[0.0, 0.0]]));
        let loss = g.softmax_cross_entropy(l, &[1]).unwrap();
        assert!((g.value(loss).values()[0] - std::f64::consts::LN_2).abs() < 1e-15);

        let l = g.constant(mat(&[&[2.0, 0.0]]));
        let loss = g.softmax_cross_entropy(l, &[0]).unwrap();
        let expected = (1.0 + (-2.0f64).exp()).ln();
        assert!((g.value(loss).values()[0] - expected).abs() < 1e-15);
        assert!((expected - 0.126928).abs() < 1e-6);

        let l = g.constant(mat(&[&[50.0, 0.0]]));
        let loss = g.softmax_cross_entropy(l, &[0]).unwrap();
        assert!(g.value(loss).values()[0] < 1e-20);
    }

    #[test]
    fn cross_entropy_is_finite_for_large_logits() {
        let mut g = Graph::new();
        let l = g.constant(mat(&[&[1e3, -1e3, 0.0], &[-1e3, -1e3, 1e3]]));
        let loss = g.softmax_cross_entropy(l, &[1, 0]).unwrap();
        assert!(g.value(loss).values()[0].is_finite());
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut g = Graph::new();
        let l = g.param(&mat(&[&[2.0, 0.0], &[0.0, 0.0]]));
        let loss = g.softmax_cross_entropy(l, &[0, 1]).unwrap();
        g.backward(loss).unwrap();
        let p = 1.0 / (1.0 + (-2.0f64).exp());
        let grad = g.grad(l).unwrap();
        let expected = [(p - 1.0) / 2.0, (1.0 - p) / 2.0, 0.25, -0.25];
        for (a, b) in grad.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::zeros(vec![2, 2]));
        assert!(matches!(g.softmax_cross_entropy(l, &[0, 2]), Err(Error::Index(_))));
    }

    #[test]
    fn backward_linear_and_square() {
        let mut g = Graph::new();
        let p = g.param(&mat(&[&[1.0, -2.0, 3.0]]));
        let q = g.param(&Tensor::full(vec![2, 2], 7.0));
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(p).unwrap(), &[1.0, 1.0, 1.0]);
        assert!(g.grad(q).is_none());

        let mut g = Graph::new();
        let w = g.param(&Tensor::scalar(3.0));
        let ww = g.mul(w, w).unwrap();
        let loss = g.sum(ww);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[6.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let w = g.param(&Tensor::scalar(3.0));
        let ww = g.mul(w, w).unwrap();
        let loss = g.sum(ww);
        g.backward(loss).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[12.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let w = g.param(&Tensor::zeros(vec![2, 2]));
        assert!(matches!(g.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn gather_rows_scatters_gradient() {
        let mut g = Graph::new();
        let p = g.param(&mat(&[&[0.0, 0.0], &[1.0, 1.0]]));
        let sel = g.gather_rows(p, &[0, 1, 0]).unwrap();
        assert_eq!(g.value(sel).values(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let s = g.sum(sel);
        g.backward(s).unwrap();
        assert_eq!(g.grad(p).unwrap(), &[2.0, 2.0, 1.0, 1.0]);
        assert!(matches!(g.gather_rows(p, &[2]), Err(Error::Index(_))));
    }
}
