use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use super::TensorError;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Variable,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize, end: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of primitive operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so operands always precede the
/// nodes that consume them. A graph is single-use: build it, call
/// [`Graph::backward`] once per loss, then drop it.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a trainable node (variable or parameter). `None` for
    /// constants and for nodes the loss does not depend on.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.slots.get(var.0).and_then(Option::as_ref)
    }
}

fn unary_operand(op: &Op) -> Option<Var> {
    match op {
        Op::Scale(a, _)
        | Op::Offset(a)
        | Op::Tanh(a)
        | Op::Sigmoid(a)
        | Op::Relu(a)
        | Op::Exp(a)
        | Op::Log(a)
        | Op::Softplus(a)
        | Op::Sum(a)
        | Op::Mean(a) => Some(*a),
        _ => None,
    }
}

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = match &op {
            Op::Concat(parts) => parts.iter().any(|p| self.nodes[p.0].requires_grad),
            Op::Slice { src, .. } => self.nodes[src.0].requires_grad,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad
            }
            other => unary_operand(other)
                .map(|a| self.nodes[a.0].requires_grad)
                .unwrap_or(false),
        };
        Ok(self.push(value, op, requires_grad))
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Trainable leaf that is not tied to a parameter store.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Variable, true)
    }

    /// Binds a stored parameter as a trainable leaf. Binding the same id twice
    /// returns the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&var) = self.bound.get(&id) {
            return var;
        }
        let var = self.push(store.get(id).clone(), Op::Param, true);
        self.bound.insert(id, var);
        var
    }

    fn same_shape(&self, name: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shapes already validated")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.value(a).dims();
        let (k2, n) = self.value(b).dims();
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        self.push_checked("matmul", Tensor::matrix(m, n, out), Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        self.push_checked("add", out, Op::Add(a, b))
    }

    /// `a[m, n] + b[1, n]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, n) = self.value(a).dims();
        let (br, bn) = self.value(b).dims();
        if br != 1 || bn != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let bias = self.value(b).data();
        let mut out = self.value(a).data().to_vec();
        for r in 0..m {
            for (o, &bv) in out[r * n..(r + 1) * n].iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let shape = self.shape(a).to_vec();
        self.push_checked("add_row", Tensor::new(shape, out)?, Op::AddRow(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        self.push_checked("sub", out, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        self.push_checked("mul", out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| x * factor);
        self.push_checked("scale", out, Op::Scale(a, factor))
    }

    pub fn offset(&mut self, a: Var, shift: f64) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| x + shift);
        self.push_checked("offset", out, Op::Offset(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(f64::tanh);
        self.push_checked("tanh", out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(sigmoid);
        self.push_checked("sigmoid", out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push_checked("relu", out, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(f64::exp);
        self.push_checked("exp", out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(TensorError::Domain {
                op: "log",
                detail: "input must be strictly positive",
            });
        }
        let out = self.value(a).map(f64::ln);
        self.push_checked("log", out, Op::Log(a))
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(softplus);
        self.push_checked("softplus", out, Op::Softplus(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push_checked("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push_checked("mean", Tensor::scalar(s), Op::Mean(a))
    }

    /// Concatenates along columns; every part must have the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Domain {
                op: "concat",
                detail: "at least one operand required",
            });
        };
        let rows = self.value(first).dims().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims();
            if r != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        self.push_checked("concat", Tensor::matrix(rows, total, out), Op::Concat(parts.to_vec()))
    }

    /// Column range `start..end` of a matrix.
    pub fn slice(&mut self, src: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let (rows, cols) = self.value(src).dims();
        if start >= end || end > cols {
            return Err(TensorError::SliceBounds { start, end, cols });
        }
        let w = end - start;
        let data = self.value(src).data();
        let mut out = Vec::with_capacity(rows * w);
        for r in 0..rows {
            out.extend_from_slice(&data[r * cols + start..r * cols + end]);
        }
        self.push_checked("slice", Tensor::matrix(rows, w, out), Op::Slice { src, start, end })
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut slots: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        slots[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let grad = match &node.op {
                Op::Variable | Op::Param => continue,
                Op::Constant => unreachable!("constants never require gradients"),
                _ => match slots[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(idx, &grad, &mut slots);
        }

        for (slot, node) in slots.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Variable | Op::Param) {
                *slot = None;
            }
        }
        Ok(Gradients { slots })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, slots: &mut [Option<Tensor>], v: Var, contribution: Tensor) {
        match &mut slots[v.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn accumulate_with(&self, slots: &mut [Option<Tensor>], v: Var, f: impl Fn(usize, f64) -> f64, grad: &Tensor) {
        let shape = self.shape(v);
        let slot = slots[v.0].get_or_insert_with(|| Tensor::zeros(shape));
        for (i, (s, &g)) in slot.data_mut().iter_mut().zip(grad.data()).enumerate() {
            *s += f(i, g);
        }
    }

    fn accumulate_constant(&self, slots: &mut [Option<Tensor>], v: Var, g: f64) {
        let shape = self.shape(v);
        let slot = slots[v.0].get_or_insert_with(|| Tensor::zeros(shape));
        for s in slot.data_mut() {
            *s += g;
        }
    }

    fn propagate(&self, idx: usize, grad: &Tensor, slots: &mut [Option<Tensor>]) {
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Constant | Op::Variable | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims();
                let n = self.value(*b).dims().1;
                if self.wants(*a) {
                    let shape = self.shape(*a);
                    let slot = slots[a.0].get_or_insert_with(|| Tensor::zeros(shape));
                    gemm(m, n, k, grad.data(), false, self.value(*b).data(), true, slot.data_mut(), true);
                }
                if self.wants(*b) {
                    let shape = self.shape(*b);
                    let slot = slots[b.0].get_or_insert_with(|| Tensor::zeros(shape));
                    gemm(k, m, n, self.value(*a).data(), true, grad.data(), false, slot.data_mut(), true);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    self.accumulate(slots, *a, grad.clone());
                }
                if self.wants(*b) {
                    self.accumulate(slots, *b, grad.clone());
                }
            }
            Op::AddRow(a, b) => {
                if self.wants(*a) {
                    self.accumulate(slots, *a, grad.clone());
                }
                if self.wants(*b) {
                    let (rows, n) = grad.dims();
                    let mut col = vec![0.0; n];
                    for r in 0..rows {
                        for (c, g) in col.iter_mut().zip(&grad.data()[r * n..(r + 1) * n]) {
                            *c += g;
                        }
                    }
                    let shape = self.shape(*b).to_vec();
                    self.accumulate(slots, *b, Tensor::new(shape, col).expect("bias shape"));
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    self.accumulate(slots, *a, grad.clone());
                }
                if self.wants(*b) {
                    self.accumulate_with(slots, *b, |_, g| -g, grad);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let bv = self.value(*b).data();
                    self.accumulate_with(slots, *a, |i, g| g * bv[i], grad);
                }
                if self.wants(*b) {
                    let av = self.value(*a).data();
                    self.accumulate_with(slots, *b, |i, g| g * av[i], grad);
                }
            }
            Op::Scale(a, f) => self.accumulate_with(slots, *a, |_, g| g * f, grad),
            Op::Offset(a) => self.accumulate(slots, *a, grad.clone()),
            Op::Tanh(a) => {
                let y = out.data();
                self.accumulate_with(slots, *a, |i, g| g * (1.0 - y[i] * y[i]), grad);
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                self.accumulate_with(slots, *a, |i, g| g * y[i] * (1.0 - y[i]), grad);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.accumulate_with(slots, *a, |i, g| if x[i] > 0.0 { g } else { 0.0 }, grad);
            }
            Op::Exp(a) => {
                let y = out.data();
                self.accumulate_with(slots, *a, |i, g| g * y[i], grad);
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                self.accumulate_with(slots, *a, |i, g| g / x[i], grad);
            }
            Op::Softplus(a) => {
                let x = self.value(*a).data();
                self.accumulate_with(slots, *a, |i, g| g * sigmoid(x[i]), grad);
            }
            Op::Sum(a) => self.accumulate_constant(slots, *a, grad.item()),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                self.accumulate_constant(slots, *a, grad.item() / n);
            }
            Op::Concat(parts) => {
                let (rows, total) = grad.dims();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).dims().1;
                    if self.wants(p) {
                        let shape = self.shape(p);
                        let slot = slots[p.0].get_or_insert_with(|| Tensor::zeros(shape));
                        let sd = slot.data_mut();
                        for r in 0..rows {
                            let src = &grad.data()[r * total + offset..r * total + offset + w];
                            for (s, g) in sd[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *s += g;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice { src, start, end } => {
                let (rows, cols) = self.value(*src).dims();
                let w = end - start;
                let shape = self.shape(*src);
                let slot = slots[src.0].get_or_insert_with(|| Tensor::zeros(shape));
                let sd = slot.data_mut();
                for r in 0..rows {
                    for (s, g) in sd[r * cols + start..r * cols + end]
                        .iter_mut()
                        .zip(&grad.data()[r * w..(r + 1) * w])
                    {
                        *s += g;
                    }
                }
            }
        }
    }

    /// Gradients for every parameter in `store`, in store order. Parameters the
    /// loss does not reach (or that were never bound) get zero tensors.
    pub fn param_gradients(&self, grads: &Gradients, store: &ParamStore) -> Vec<Tensor> {
        store
            .iter()
            .map(|(id, _, value)| {
                self.bound
                    .get(&id)
                    .and_then(|&v| grads.get(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(value.shape()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_grad(f: impl Fn(&mut Graph, Var) -> Result<Var, TensorError>, x0: f64) -> f64 {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(x0));
        let y = f(&mut g, x).unwrap();
        g.backward(y).unwrap().get(x).unwrap().item()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = Tensor::matrix(3, 3, vec![1.0, -2.0, 3.5, 0.25, 4.0, -1.0, 7.0, 8.0, 9.0]);
        let i = g.constant(Tensor::identity(3));
        let av = g.constant(a.clone());
        let out = g.matmul(i, av).unwrap();
        assert_eq!(g.value(out), &a);
    }

    #[test]
    fn simple_values() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::scalar(0.0));
        let s = g.sigmoid(z).unwrap();
        assert_eq!(g.value(s).item(), 0.5);
        let n = g.constant(Tensor::scalar(-2.5));
        let r = g.relu(n).unwrap();
        assert_eq!(g.value(r).item(), 0.0);
    }

    #[test]
    fn analytic_derivatives() {
        assert_eq!(scalar_grad(|g, x| g.mul(x, x), 3.0), 6.0);
        assert_eq!(scalar_grad(|g, x| g.sigmoid(x), 0.0), 0.25);
        let mut g = Graph::new();
        let x = g.variable(Tensor::row(vec![1.0, 2.0, 3.0, 4.0]));
        let m = g.mean(x).unwrap();
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(2.0));
        let c = g.constant(Tensor::scalar(5.0));
        let y = g.mul(x, c).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 5.0);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn errors_are_structured() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("matmul"));
        assert!(matches!(g.backward(a), Err(TensorError::NonScalarLoss(_))));
        let neg = g.constant(Tensor::scalar(-1.0));
        assert!(matches!(g.log(neg), Err(TensorError::Domain { .. })));
        let big = g.constant(Tensor::scalar(1000.0));
        assert!(matches!(g.exp(big), Err(TensorError::NonFinite { op: "exp" })));
    }

    #[test]
    fn softplus_is_stable() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![-800.0, 0.0, 800.0]));
        let y = g.softplus(x).unwrap();
        let v = g.value(y).data();
        assert!(v[0] >= 0.0 && v[0] < 1e-300);
        assert!((v[1] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(v[2], 800.0);
    }
}
