//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every primitive evaluates eagerly and appends a node to the tape. Calling
//! [`Tape::backward`] walks the nodes in reverse and accumulates
//! `d loss / d node` into each node that requires a gradient. A tape is
//! single-use: build, backward once, then [`Tape::reset`] or drop it.

use crate::error::{Error, Result};
use crate::expm::{expm, expm_adjoint};
use crate::tensor::{square_extent, MatmulPlan, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var, MatmulPlan),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Square(Var),
    Abs(Var),
    Recip(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Transpose(Var),
    Reshape(Var),
    Expm(Var),
    Trace(Var),
    /// `tr(e^{A∘A}) - n`; keeps `e^{A∘A}` for the backward pass.
    Acyclicity(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// An ordered record of primitive operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (shape[..axis].iter().product(), shape[axis + 1..].iter().product())
}

/// Checks that `b` broadcasts against `a` over leading axes only.
/// `f(a[i], b[i % b.len()])`, with `b` repeated over leading axes.
fn broadcast_zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    if b.is_empty() {
        return out;
    }
    for chunk in a.chunks(b.len()) {
        out.extend(chunk.iter().zip(b).map(|(&x, &y)| f(x, y)));
    }
    out
}

fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

/// Sums `g` (shaped like the broadcast result) down to `shape`.
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape);
    let m = out.numel();
    for chunk in g.data().chunks(m) {
        for (o, v) in out.data_mut().iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and gradient.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        if self.backward_done {
            // Appending after backward would silently miss gradients.
            self.grads.clear();
            self.backward_done = false;
        }
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient after [`Tape::backward`]; `None` when the node
    /// does not require one or is disconnected from the loss.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let plan = MatmulPlan::new(self.value(a).shape(), self.value(b).shape())?;
        let mut out = vec![0.0; plan.out_shape.iter().product()];
        plan.run(self.value(a).data(), self.value(b).data(), &mut out);
        let value = Tensor::new(plan.out_shape.clone(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b, plan), rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !broadcast_ok(ta.shape(), tb.shape()) {
            return Err(Error::Shape(format!("{name} {:?} with {:?}", ta.shape(), tb.shape())));
        }
        Tensor::new(ta.shape().to_vec(), broadcast_zip(ta.data(), tb.data(), f))
    }

    /// `a + b`; `b` may broadcast over leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product; `b` may broadcast over leading axes of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v + s);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |v| v * v, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// Elementwise `1 / a`.
    pub fn recip(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().contains(&0.0) {
            return Err(Error::Domain("reciprocal of zero".into()));
        }
        Ok(self.unary(a, |v| 1.0 / v, Op::Recip(a)))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.numel().max(1) as f64);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let shape = t.shape();
        let Some((&k, rest)) = shape.split_last() else {
            return Err(Error::Shape("sum_last of a scalar".into()));
        };
        let data = if k == 0 {
            vec![0.0; rest.iter().product()]
        } else {
            t.data().chunks(k).map(|c| c.iter().sum()).collect()
        };
        let value = Tensor::new(rest.to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::SumLast(a), rg))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.value(*v).shape();
            let same_rank = s.len() == base.len();
            if !same_rank || s[..axis] != base[..axis] || s[axis + 1..] != base[axis + 1..] {
                return Err(Error::Shape(format!("concat {base:?} with {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let w = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        let rg = inputs.iter().any(|v| self.rg(*v));
        Ok(self.push(value, Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    /// Entries `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let shape = t.shape();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(Error::Shape(format!("slice {start}..{end} of axis {axis} in {shape:?}")));
        }
        let (outer, inner) = outer_inner(shape, axis);
        let full = shape[axis] * inner;
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            data.extend_from_slice(&t.data()[o * full + start * inner..o * full + end * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = end - start;
        let value = Tensor::new(out_shape, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Slice { input: a, axis, start }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Matrix exponential of a square matrix.
    pub fn expm(&mut self, a: Var) -> Result<Var> {
        let value = expm(self.value(a))?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Expm(a), rg))
    }

    pub fn trace(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).trace()?);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Trace(a), rg))
    }

    /// Fused `tr(e^{A∘A}) - n` with closed-form gradient `(e^{A∘A})^T ∘ 2A`.
    pub fn acyclicity(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = square_extent(t)?;
        let e = expm(&t.map(|v| v * v))?;
        let value = Tensor::scalar(e.trace()? - n as f64);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Acyclicity(a, e), rg))
    }

    /// Populates gradients of `loss` with respect to every node that
    /// requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::State("backward called twice on the same tape".into()));
        }
        if self.nodes.is_empty() {
            return Err(Error::State("backward on an empty tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        self.grads = grads;
        self.backward_done = true;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, contribution: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contribution),
                slot @ None => *slot = Some(contribution),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b, plan) => {
                if self.rg(*a) {
                    let mut ga = Tensor::zeros(val(*a).shape());
                    plan.grad_a(g.data(), val(*b).data(), ga.data_mut());
                    acc(*a, ga);
                }
                if self.rg(*b) {
                    let mut gb = Tensor::zeros(val(*b).shape());
                    plan.grad_b(g.data(), val(*a).data(), gb.data_mut());
                    acc(*b, gb);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                if self.rg(*b) {
                    acc(*b, reduce_to(g, val(*b).shape()));
                }
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                if self.rg(*b) {
                    acc(*b, reduce_to(&g.scale(-1.0), val(*b).shape()));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if self.rg(*a) {
                    acc(*a, Tensor::new(g.shape().to_vec(), broadcast_zip(g.data(), tb.data(), |x, y| x * y))?);
                }
                if self.rg(*b) {
                    acc(*b, reduce_to(&g.zip_map(ta, |x, y| x * y), tb.shape()));
                }
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |g, y| g * y)),
            Op::Log(a) => acc(*a, g.zip_map(val(*a), |g, x| g / x)),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |g, y| g * (1.0 - y * y))),
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |g, y| g * y * (1.0 - y))),
            Op::Relu(a) => acc(*a, g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 })),
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |g, x| 2.0 * x * g)),
            Op::Abs(a) => acc(*a, g.zip_map(val(*a), |g, x| g * x.signum() * (x != 0.0) as u8 as f64)),
            Op::Recip(a) => acc(*a, g.zip_map(&node.value, |g, y| -g * y * y)),
            Op::Sum(a) => acc(*a, Tensor::full(val(*a).shape(), g.item())),
            Op::Mean(a) => {
                let n = val(*a).numel().max(1) as f64;
                acc(*a, Tensor::full(val(*a).shape(), g.item() / n));
            }
            Op::SumLast(a) => {
                let shape = val(*a).shape();
                let k = *shape.last().unwrap_or(&1);
                let data = g.data().iter().flat_map(|&x| std::iter::repeat_n(x, k)).collect();
                acc(*a, Tensor::new(shape.to_vec(), data)?);
            }
            Op::Concat { inputs, axis } => {
                let (outer, inner) = outer_inner(g.shape(), *axis);
                let total = g.shape()[*axis];
                let mut offset = 0;
                for v in inputs {
                    let shape = val(*v).shape();
                    let w = shape[*axis] * inner;
                    if self.rg(*v) {
                        let mut data = Vec::with_capacity(outer * w);
                        for o in 0..outer {
                            let base = o * total * inner + offset;
                            data.extend_from_slice(&g.data()[base..base + w]);
                        }
                        acc(*v, Tensor::new(shape.to_vec(), data)?);
                    }
                    offset += w;
                }
            }
            Op::Slice { input, axis, start } => {
                let shape = val(*input).shape();
                let (outer, inner) = outer_inner(shape, *axis);
                let full = shape[*axis] * inner;
                let w = g.shape()[*axis] * inner;
                let mut out = Tensor::zeros(shape);
                for o in 0..outer {
                    let dst = o * full + start * inner;
                    out.data_mut()[dst..dst + w].copy_from_slice(&g.data()[o * w..(o + 1) * w]);
                }
                acc(*input, out);
            }
            Op::Transpose(a) => acc(*a, g.transpose()?),
            Op::Reshape(a) => acc(*a, g.clone().reshape(val(*a).shape())?),
            Op::Expm(a) => acc(*a, expm_adjoint(val(*a), g)?),
            Op::Trace(a) => {
                let n = val(*a).shape()[0];
                acc(*a, Tensor::eye(n).scale(g.item()));
            }
            Op::Acyclicity(a, e) => {
                let s = g.item();
                let et = e.transpose()?;
                acc(*a, et.zip_map(val(*a), |ev, av| s * 2.0 * av * ev));
            }
        }
        Ok(())
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn relu_definition() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn exp_log_inverse() {
        let mut t = Tape::new();
        let xs = vec![1e-3, 0.5, 1.0, 7.25, 300.0];
        let x = t.constant(Tensor::vector(xs.clone()));
        let l = t.log(x).unwrap();
        let e = t.exp(l);
        for (got, want) in t.value(e).data().iter().zip(&xs) {
            assert!((got - want).abs() <= 1e-12 * want.max(1.0));
        }
    }

    #[test]
    fn log_domain_error() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(t.log(x), Err(Error::Domain(_))));
    }

    #[test]
    fn quadratic_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn linear_map_gradient_is_column_sums() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let x = t.param(Tensor::new(vec![2, 1], vec![0.3, -0.7]).unwrap());
        let ax = t.matmul(a, x).unwrap();
        let loss = t.sum(ax);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn backward_twice_is_state_error() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(2.0));
        let y = t.square(x);
        t.backward(y).unwrap();
        assert!(matches!(t.backward(y), Err(Error::State(_))));
        t.reset();
        assert!(t.is_empty());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let a = t.scale(x, 2.0);
        let b = t.square(x);
        let s = t.add(a, b).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 2.0 + 6.0);
    }

    #[test]
    fn broadcast_bias_gradient_sums_rows() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[3, 2]));
        let b = t.param(Tensor::vector(vec![1.0, -1.0]));
        let y = t.add(x, b).unwrap();
        let loss = t.sum(y);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(b).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn concat_slice_roundtrip_gradient() {
        let mut t = Tape::new();
        let a = t.param(Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap());
        let b = t.param(Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let s = t.slice(c, 1, 1, 2).unwrap();
        assert_eq!(t.value(s).data(), &[3.0, 5.0]);
        let loss = t.sum(s);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(a).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(t.grad(b).unwrap().data(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn trace_of_expm_gradient_is_transposed_exponential() {
        let m = Tensor::from_rows(&[vec![0.1, 0.4], vec![-0.3, 0.2]]).unwrap();
        let mut t = Tape::new();
        let x = t.param(m.clone());
        let e = t.expm(x).unwrap();
        let tr = t.trace(e).unwrap();
        t.backward(tr).unwrap();
        let want = expm(&m).unwrap().transpose().unwrap();
        assert!(close(t.grad(x).unwrap().data(), want.data(), 1e-12));
    }

    #[test]
    fn dimension_errors() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(t.matmul(a, a), Err(Error::Shape(_))));
        assert!(matches!(t.add(a, b), Err(Error::Shape(_))));
        assert!(matches!(t.expm(a), Err(Error::Shape(_))));
    }
}
