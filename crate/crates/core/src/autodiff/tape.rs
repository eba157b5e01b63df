//! Reverse-mode tape. Operations append nodes; [`Tape::backward`] walks
//! them in reverse once and leaves a gradient on every node that needs
//! one.

use super::conv::{conv2d_backward, conv2d_forward, Conv2dSpec, ConvGeometry};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value<'p, T> {
    Owned(Tensor<T>),
    Borrowed(&'p Tensor<T>),
}

impl<T> Value<'_, T> {
    fn get(&self) -> &Tensor<T> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
        cols: Vec<T>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Mul(Var, Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    Huber {
        pred: Var,
        target: Vec<T>,
        delta: T,
    },
    Mse {
        pred: Var,
        target: Vec<T>,
    },
}

struct Node<'p, T> {
    value: Value<'p, T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

pub struct Tape<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
    grad_enabled: bool,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
            consumed: false,
        }
    }

    /// A tape that records no gradient information (inference).
    pub fn no_grad() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value<'p, T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.grad_enabled,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'p, T> {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.node(v).value.get()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.node(v).grad.as_deref()
    }

    /// Summed gradient over every node that borrows `param`.
    pub fn param_grad(&self, param: &Tensor<T>) -> Option<Vec<T>> {
        let mut acc: Option<Vec<T>> = None;
        for node in &self.nodes {
            let (Value::Borrowed(t), Some(g)) = (&node.value, &node.grad) else {
                continue;
            };
            if !std::ptr::eq(*t, param) {
                continue;
            }
            match &mut acc {
                None => acc = Some(g.clone()),
                Some(a) => a.iter_mut().zip(g).for_each(|(a, &g)| *a += g),
            }
        }
        acc
    }

    /// Owned input; tracks gradients when the tensor is flagged so.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad();
        self.push(Value::Owned(t), Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Value::Owned(t), Op::Leaf, false)
    }

    /// Borrowed trainable parameter; gradients are recorded on the tape.
    pub fn param(&mut self, t: &'p Tensor<T>) -> Var {
        self.push(Value::Borrowed(t), Op::Leaf, true)
    }

    /// Copies the value out of the tape with the recorded gradient attached.
    pub fn take_tensor(&self, v: Var) -> Tensor<T> {
        let mut t = self.value(v).clone();
        if let Some(g) = self.grad(v) {
            t.set_grad(g.to_vec()).expect("grad matches value");
        }
        t
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: Conv2dSpec) -> Result<Var> {
        let geom = ConvGeometry::new(spec, self.shape(x))?;
        let ws = spec.weight_shape();
        if self.shape(w) != ws {
            return Err(Error::ShapeMismatch(format!(
                "conv weight {:?}, expected {ws:?}",
                self.shape(w)
            )));
        }
        if self.shape(b) != [spec.out_channels] {
            return Err(Error::ShapeMismatch(format!(
                "conv bias {:?}, expected [{}]",
                self.shape(b),
                spec.out_channels
            )));
        }
        let (out, cols) = conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let cols = if rg && self.grad_enabled { cols } else { Vec::new() };
        let t = Tensor::new(geom.output_shape(), out)?;
        Ok(self.push(Value::Owned(t), Op::Conv2d { x, w, b, geom, cols }, rg))
    }

    /// `x·wᵀ + b` for `x: [N, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        let (&[n, fin], &[fout, win]) = (xs, ws) else {
            return Err(Error::ShapeMismatch(format!("linear: x {xs:?}, w {ws:?}")));
        };
        if win != fin || bs != [fout] {
            return Err(Error::ShapeMismatch(format!("linear: x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let mut y = vec![T::zero(); n * fout];
        for row in y.chunks_mut(fout) {
            row.copy_from_slice(self.value(b).data());
        }
        T::gemm(n, fin, fout, self.value(x).data(), false, self.value(w).data(), true, T::one(), &mut y);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let t = Tensor::new(vec![n, fout], y)?;
        Ok(self.push(Value::Owned(t), Op::Linear { x, w, b }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let src = self.value(x);
        let t = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(Value::Owned(t), op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// Element-wise product of two same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch(format!(
                "mul: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Value::Owned(t), Op::Mul(a, b), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).numel() {
            return Err(Error::ShapeMismatch(format!(
                "reshape {:?} to {shape:?}",
                self.shape(x)
            )));
        }
        let t = Tensor::new(shape.to_vec(), self.value(x).data().to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(Value::Owned(t), Op::Reshape(x), rg))
    }

    /// Collapses all but the leading dimension.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let n = *s.first().ok_or_else(|| Error::ShapeMismatch("flatten of rank-0".into()))?;
        let rest = numel(&s[1..]);
        self.reshape(x, &[n, rest])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Value::Owned(Tensor::scalar(s)), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::lit(v.numel() as f64);
        let rg = self.rg(x);
        self.push(Value::Owned(Tensor::scalar(s)), Op::Mean(x), rg)
    }

    /// Picks `x[i, idx[i]]` from a `[N, A]` tensor.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let &[n, a] = self.shape(x) else {
            return Err(Error::ShapeMismatch(format!("gather on {:?}", self.shape(x))));
        };
        if idx.len() != n || idx.iter().any(|&i| i >= a) {
            return Err(Error::ShapeMismatch(format!("gather indices {idx:?} for [{n}, {a}]")));
        }
        let data = idx
            .iter()
            .enumerate()
            .map(|(r, &c)| self.value(x).data()[r * a + c])
            .collect();
        let t = Tensor::new(vec![n], data)?;
        let rg = self.rg(x);
        Ok(self.push(Value::Owned(t), Op::Gather { x, idx: idx.to_vec() }, rg))
    }

    fn check_target(&self, pred: Var, target: &[T]) -> Result<()> {
        if self.value(pred).numel() != target.len() {
            return Err(Error::ShapeMismatch(format!(
                "loss: prediction {:?} vs {} targets",
                self.shape(pred),
                target.len()
            )));
        }
        Ok(())
    }

    /// Mean Huber loss against constant targets.
    pub fn huber(&mut self, pred: Var, target: &[T], delta: T) -> Result<Var> {
        self.check_target(pred, target)?;
        let p = self.value(pred).data();
        let half = T::lit(0.5);
        let total: T = p
            .iter()
            .zip(target)
            .map(|(&a, &t)| {
                let d = (a - t).abs();
                if d <= delta {
                    half * d * d
                } else {
                    delta * (d - half * delta)
                }
            })
            .sum();
        let loss = total / T::lit(p.len().max(1) as f64);
        let rg = self.rg(pred);
        Ok(self.push(
            Value::Owned(Tensor::scalar(loss)),
            Op::Huber {
                pred,
                target: target.to_vec(),
                delta,
            },
            rg,
        ))
    }

    /// Mean squared error against constant targets.
    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        self.check_target(pred, target)?;
        let p = self.value(pred).data();
        let total: T = p.iter().zip(target).map(|(&a, &t)| (a - t) * (a - t)).sum();
        let loss = total / T::lit(p.len().max(1) as f64);
        let rg = self.rg(pred);
        Ok(self.push(
            Value::Owned(Tensor::scalar(loss)),
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            rg,
        ))
    }

    /// Back-propagates from a scalar `loss`. The graph can be differentiated
    /// once; intermediate buffers are released afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        if !self.rg(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let (lower, upper) = self.nodes.split_at_mut(i);
            let node = &mut upper[0];
            if !node.requires_grad {
                continue;
            }
            let op = std::mem::replace(&mut node.op, Op::Leaf);
            let Some(g) = node.grad.as_ref() else { continue };
            let out = node.value.get();
            for (target, contrib) in local_grads(&op, g, out, lower) {
                let n = &mut lower[target.0];
                if !n.requires_grad {
                    continue;
                }
                match &mut n.grad {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contrib) {
                            *a += *c;
                        }
                    }
                    None => n.grad = Some(contrib),
                }
            }
            // release cached buffers of interior nodes
            if !matches!(op, Op::Leaf) {
                if let Value::Owned(_) = node.value {
                    node.grad = None;
                }
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Gradient contributions of one node to its inputs.
fn local_grads<T: Scalar>(op: &Op<T>, g: &[T], out: &Tensor<T>, nodes: &[Node<'_, T>]) -> Vec<(Var, Vec<T>)> {
    let val = |v: Var| nodes[v.0].value.get();
    let rg = |v: Var| nodes[v.0].requires_grad;
    match op {
        Op::Leaf => Vec::new(),
        Op::Conv2d { x, w, b, geom, cols } => {
            let grads = conv2d_backward(geom, cols, val(*w).data(), g, rg(*x));
            let mut v = vec![(*w, grads.weight), (*b, grads.bias)];
            if let Some(dx) = grads.input {
                v.push((*x, dx));
            }
            v
        }
        Op::Linear { x, w, b } => {
            let (xs, ws) = (val(*x).shape(), val(*w).shape());
            let (n, fin, fout) = (xs[0], xs[1], ws[0]);
            let mut v = Vec::with_capacity(3);
            if rg(*w) {
                let mut dw = vec![T::zero(); fout * fin];
                T::gemm(fout, n, fin, g, true, val(*x).data(), false, T::zero(), &mut dw);
                v.push((*w, dw));
            }
            if rg(*b) {
                let mut db = vec![T::zero(); fout];
                for row in g.chunks(fout) {
                    for (d, &r) in db.iter_mut().zip(row) {
                        *d += r;
                    }
                }
                v.push((*b, db));
            }
            if rg(*x) {
                let mut dx = vec![T::zero(); n * fin];
                T::gemm(n, fout, fin, g, false, val(*w).data(), false, T::zero(), &mut dx);
                v.push((*x, dx));
            }
            v
        }
        Op::Relu(x) => {
            let d = val(*x)
                .data()
                .iter()
                .zip(g)
                .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                .collect();
            vec![(*x, d)]
        }
        Op::Sigmoid(x) => {
            let d = out
                .data()
                .iter()
                .zip(g)
                .map(|(&y, &gv)| gv * y * (T::one() - y))
                .collect();
            vec![(*x, d)]
        }
        Op::Mul(a, b) => {
            let mut v = Vec::with_capacity(2);
            if rg(*a) {
                v.push((*a, g.iter().zip(val(*b).data()).map(|(&gv, &bv)| gv * bv).collect()));
            }
            if rg(*b) {
                v.push((*b, g.iter().zip(val(*a).data()).map(|(&gv, &av)| gv * av).collect()));
            }
            v
        }
        Op::Reshape(x) => vec![(*x, g.to_vec())],
        Op::Sum(x) => vec![(*x, vec![g[0]; val(*x).numel()])],
        Op::Mean(x) => {
            let n = val(*x).numel();
            vec![(*x, vec![g[0] / T::lit(n as f64); n])]
        }
        Op::Gather { x, idx } => {
            let a = val(*x).shape()[1];
            let mut d = vec![T::zero(); val(*x).numel()];
            for (r, (&c, &gv)) in idx.iter().zip(g).enumerate() {
                d[r * a + c] += gv;
            }
            vec![(*x, d)]
        }
        Op::Huber { pred, target, delta } => {
            let n = T::lit(target.len().max(1) as f64);
            let d = val(*pred)
                .data()
                .iter()
                .zip(target)
                .map(|(&p, &t)| g[0] * (p - t).max(-*delta).min(*delta) / n)
                .collect();
            vec![(*pred, d)]
        }
        Op::Mse { pred, target } => {
            let n = T::lit(target.len().max(1) as f64);
            let two = T::lit(2.0);
            let d = val(*pred)
                .data()
                .iter()
                .zip(target)
                .map(|(&p, &t)| g[0] * two * (p - t) / n)
                .collect();
            vec![(*pred, d)]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1.0, -2.0, 3.0, 4.0, 5.0, 6.0]).with_requires_grad(true));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn product_rule() {
        let mut tape = Tape::new();
        let xv = [1.0, 2.0, 3.0];
        let yv = [-4.0, 0.5, 7.0];
        let x = tape.leaf(t(&[3], &xv).with_requires_grad(true));
        let y = tape.leaf(t(&[3], &yv).with_requires_grad(true));
        let p = tape.mul(x, y).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &yv);
        assert_eq!(tape.grad(y).unwrap(), &xv);
        assert_eq!(tape.take_tensor(x).grad().unwrap(), &yv);
    }

    #[test]
    fn second_backward_fails() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[2.0]).with_requires_grad(true));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::GraphConsumed)));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[2.0, 1.0]).with_requires_grad(true));
        let r = tape.relu(x);
        assert!(tape.backward(r).is_err());
    }

    #[test]
    fn relu_and_sigmoid_ranges() {
        let mut tape = Tape::<f64>::no_grad();
        let x = tape.constant(Tensor::from_fn(&[101], |i| (i as f64 - 50.0) * 0.7));
        let r = tape.relu(x);
        let s = tape.sigmoid(x);
        assert!(tape.value(r).data().iter().all(|&v| v >= 0.0));
        assert!(tape.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let w = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2], &[0.5, -0.5]);
        let mut tape = Tape::no_grad();
        let x = tape.constant(t(&[1, 2], &[1.0, 1.0]));
        let (wv, bv) = (tape.param(&w), tape.param(&b));
        let y = tape.linear(x, wv, bv).unwrap();
        assert_eq!(tape.value(y).data(), &[3.5, 6.5]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert!(tape.grad(wv).is_none());
    }

    #[test]
    fn huber_branches() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(t(&[2], &[0.5, 3.0]).with_requires_grad(true));
        let l = tape.huber(p, &[0.0, 0.0], 1.0).unwrap();
        // 0.5*0.25 and 1*(3-0.5), averaged
        assert!((tape.value(l).data()[0] - (0.125 + 2.5) / 2.0).abs() < 1e-15);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(p).unwrap(), &[0.25, 0.5]);
    }
}
