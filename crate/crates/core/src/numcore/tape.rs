//! Reverse-mode differentiation over a linear operation tape.
//!
//! Every op appends one node; `backward` replays the nodes in exact reverse
//! order of recording. Constants never receive gradients.

use super::tensor::{check_finite, l2_norm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
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
    Constant,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowBias(Var, Var),
    Relu(Var),
    NormalizeRows { input: Var, norms: Vec<f64> },
    GatherRows { input: Var, indices: Vec<usize> },
    Interleave(Var, Var),
    ConcatRows(Var, Var),
    Sum(Var),
    /// Scalar whose gradient with respect to `input` was computed alongside
    /// the forward value.
    ScalarWithGrad { input: Var, grad: Tensor },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros when `var` did not
    /// influence the loss.
    pub fn get(&self, var: Var) -> Tensor {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`; the layout used by weights stored as `[out × in]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulT(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).scale(s);
        check_finite("scale", out.data())?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Scale(a, s), rg))
    }

    /// Adds a bias row (`[n]` or `[1×n]`) to every row of an `[m×n]` matrix.
    /// This is the only broadcast the tape supports.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2("add_row_bias")?;
        let b = self.value(bias);
        if b.len() != n || b.shape().iter().product::<usize>() != n || b.shape().len() > 2 {
            return Err(Error::ShapeMismatch {
                op: "add_row_bias",
                left: self.value(x).shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let mut out = self.value(x).data().to_vec();
        for i in 0..m {
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        check_finite("add_row_bias", &out)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![m, n], out),
            Op::AddRowBias(x, bias),
            rg,
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// Divides each row by its L2 norm. A zero row is an error.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = x.dims2("normalize_rows")?;
        let mut norms = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = x.row(i);
            let norm = l2_norm(row);
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::ZeroNorm { row: i });
            }
            out.extend(row.iter().map(|v| v / norm));
            norms.push(norm);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![m, n], out),
            Op::NormalizeRows { input: a, norms },
            rg,
        ))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let out = self.value(a).gather_rows(indices)?;
        let rg = self.rg(a);
        Ok(self.push(
            out,
            Op::GatherRows {
                input: a,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Row `2q` of the result is row `q` of `a`; row `2q+1` is row `q` of `b`.
    pub fn interleave_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = interleave(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Interleave(a, b), rg))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).concat_rows(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatRows(a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        check_finite("sum", &[s])?;
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), rg))
    }

    /// Records a scalar together with its gradient with respect to `input`.
    /// Used by fused losses whose adjoint is cheaper to form during the
    /// forward computation.
    pub fn scalar_with_grad(&mut self, input: Var, value: f64, grad: Tensor) -> Result<Var> {
        self.value(input).same_shape(&grad, "scalar_with_grad")?;
        check_finite("scalar_with_grad", &[value])?;
        check_finite("scalar_with_grad", grad.data())?;
        let rg = self.rg(input);
        Ok(self.push(Tensor::scalar(value), Op::ScalarWithGrad { input, grad }, rg))
    }

    /// Mean softmax cross-entropy of `[B×K]` logits against integer targets.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (loss, grad) = softmax_cross_entropy_with_grad(self.value(logits), targets)?;
        self.scalar_with_grad(logits, loss, grad)
    }

    /// Gradients of the scalar `root` with respect to every recorded node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(root_value.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                // leaves keep their gradient for the caller
                Op::Leaf => grads[idx] = Some(upstream),
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let g = upstream.matmul_t(self.value(*b))?;
                        accumulate(&mut grads, *a, g)?;
                    }
                    if self.rg(*b) {
                        let g = self.value(*a).t_matmul(&upstream)?;
                        accumulate(&mut grads, *b, g)?;
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.rg(*a) {
                        let g = upstream.matmul(self.value(*b))?;
                        accumulate(&mut grads, *a, g)?;
                    }
                    if self.rg(*b) {
                        let g = upstream.t_matmul(self.value(*a))?;
                        accumulate(&mut grads, *b, g)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, upstream.clone())?;
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, upstream.clone())?;
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, upstream.clone())?;
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, upstream.scale(-1.0))?;
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let g = upstream.zip_map(self.value(*b), "mul_grad", |u, y| u * y)?;
                        accumulate(&mut grads, *a, g)?;
                    }
                    if self.rg(*b) {
                        let g = upstream.zip_map(self.value(*a), "mul_grad", |u, x| u * x)?;
                        accumulate(&mut grads, *b, g)?;
                    }
                }
                Op::Scale(a, s) => {
                    accumulate(&mut grads, *a, upstream.scale(*s))?;
                }
                Op::AddRowBias(x, bias) => {
                    if self.rg(*bias) {
                        let n = upstream.cols();
                        let mut col_sums = vec![0.0; n];
                        for i in 0..upstream.rows() {
                            for (c, &u) in col_sums.iter_mut().zip(upstream.row(i)) {
                                *c += u;
                            }
                        }
                        let shape = self.value(*bias).shape().to_vec();
                        accumulate(&mut grads, *bias, Tensor::from_parts_unchecked(shape, col_sums))?;
                    }
                    if self.rg(*x) {
                        accumulate(&mut grads, *x, upstream)?;
                    }
                }
                Op::Relu(a) => {
                    let g = upstream.zip_map(self.value(*a), "relu_grad", |u, x| if x > 0.0 { u } else { 0.0 })?;
                    accumulate(&mut grads, *a, g)?;
                }
                Op::NormalizeRows { input, norms } => {
                    let y = &node.value;
                    let mut g = upstream.clone();
                    for (i, &norm) in norms.iter().enumerate() {
                        let yr = y.row(i);
                        let proj: f64 = yr.iter().zip(upstream.row(i)).map(|(a, b)| a * b).sum();
                        for (gv, &yv) in g.row_mut(i).iter_mut().zip(yr) {
                            *gv = (*gv - yv * proj) / norm;
                        }
                    }
                    accumulate(&mut grads, *input, g)?;
                }
                Op::GatherRows { input, indices } => {
                    let mut g = Tensor::zeros(self.value(*input).shape());
                    for (q, &src) in indices.iter().enumerate() {
                        for (gv, &u) in g.row_mut(src).iter_mut().zip(upstream.row(q)) {
                            *gv += u;
                        }
                    }
                    accumulate(&mut grads, *input, g)?;
                }
                Op::Interleave(a, b) => {
                    let rows = self.value(*a).rows();
                    let even: Vec<usize> = (0..rows).map(|q| 2 * q).collect();
                    let odd: Vec<usize> = (0..rows).map(|q| 2 * q + 1).collect();
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, upstream.gather_rows(&even)?)?;
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, upstream.gather_rows(&odd)?)?;
                    }
                }
                Op::ConcatRows(a, b) => {
                    let ra = self.value(*a).rows();
                    let rb = self.value(*b).rows();
                    if self.rg(*a) {
                        let idx: Vec<usize> = (0..ra).collect();
                        accumulate(&mut grads, *a, upstream.gather_rows(&idx)?)?;
                    }
                    if self.rg(*b) {
                        let idx: Vec<usize> = (ra..ra + rb).collect();
                        accumulate(&mut grads, *b, upstream.gather_rows(&idx)?)?;
                    }
                }
                Op::Sum(a) => {
                    let g = Tensor::full(self.value(*a).shape(), upstream.item());
                    accumulate(&mut grads, *a, g)?;
                }
                Op::ScalarWithGrad { input, grad } => {
                    accumulate(&mut grads, *input, grad.scale(upstream.item()))?;
                }
            }
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) -> Result<()> {
    match &mut grads[var.0] {
        Some(existing) => {
            *existing = existing.add(&g)?;
        }
        slot @ None => *slot = Some(g),
    }
    Ok(())
}

pub(crate) fn interleave(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ra, ca) = a.dims2("interleave")?;
    let (rb, cb) = b.dims2("interleave")?;
    if ra != rb || ca != cb {
        return Err(Error::ShapeMismatch {
            op: "interleave",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut data = Vec::with_capacity(2 * ra * ca);
    for q in 0..ra {
        data.extend_from_slice(a.row(q));
        data.extend_from_slice(b.row(q));
    }
    Ok(Tensor::from_parts_unchecked(vec![2 * ra, ca], data))
}

/// Mean cross-entropy and its gradient `(softmax − onehot) / B`.
pub fn softmax_cross_entropy_with_grad(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let (b, k) = logits.dims2("softmax_cross_entropy")?;
    if targets.len() != b {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            left: logits.shape().to_vec(),
            right: vec![targets.len()],
        });
    }
    if b == 0 {
        return Err(Error::invalid("softmax_cross_entropy on an empty batch"));
    }
    let mut grad = Vec::with_capacity(b * k);
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t >= k {
            return Err(Error::LabelOutOfRange { label: t, classes: k });
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        total += lse - row[t];
        for (j, &v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            grad.push((p - if j == t { 1.0 } else { 0.0 }) / b as f64);
        }
    }
    let loss = total / b as f64;
    check_finite("softmax_cross_entropy", &[loss])?;
    Ok((loss, Tensor::from_parts_unchecked(vec![b, k], grad)))
}

/// Mean softmax cross-entropy without recording anything.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    softmax_cross_entropy_with_grad(logits, targets).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn constant_graph_gives_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let c = tape.constant(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let loss = tape.sum(c).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn uniform_and_saturated_cross_entropy() {
        let uniform = Tensor::zeros(&[1, 4]);
        let l = softmax_cross_entropy(&uniform, &[2]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);

        let mut sat = Tensor::zeros(&[1, 4]);
        sat.data_mut()[1] = 50.0;
        assert!(softmax_cross_entropy(&sat, &[1]).unwrap() < 1e-9);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let logits = Tensor::zeros(&[2, 3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[0, 3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn zero_row_normalization_fails() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 3]));
        assert!(matches!(tape.normalize_rows(x), Err(Error::ZeroNorm { row: 0 })));
    }

    #[test]
    fn interleave_orders_rows() {
        let a = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(interleave(&a, &b).unwrap().data(), &[1.0, 3.0, 2.0, 4.0]);
    }
}
