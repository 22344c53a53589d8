//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] is an append-only list of scalar nodes. Every node stores its
//! value, the operator that produced it and the local partial derivative
//! with respect to each parent. Parents always precede their children, so a
//! single reverse sweep from a root accumulates exact adjoints.
//!
//! ```
//! use ldf::autodiff::Tape;
//!
//! let mut tape = Tape::new();
//! let p = tape.param(3.0);
//! let y = tape.square(p);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(tape.value(y), 9.0);
//! assert_eq!(grads.param(0), 6.0);
//! ```
//!
//! Non-smooth operators use the subgradient `0` at their kinks: `relu(0)`,
//! `abs(0)` and `max(0, x)` at `x = 0` all propagate a zero derivative.

use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

fn fresh_id() -> u32 {
    NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

/// Operator that produced a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Param,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    Offset,
    Square,
    Sqrt,
    Exp,
    Ln,
    Sin,
    Cos,
    Powf,
    Relu,
    Sigmoid,
    Abs,
    SignedSqrt,
    Clamp,
    Sum,
    Dot,
    Affine,
}

/// Append-only record of scalar operations.
#[derive(Debug)]
pub struct Tape {
    id: u32,
    ops: Vec<Op>,
    values: Vec<f64>,
    edge_start: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    params: Vec<u32>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: fresh_id(),
            ops: Vec::new(),
            values: Vec::new(),
            edge_start: vec![0],
            parents: Vec::new(),
            partials: Vec::new(),
            params: Vec::new(),
        }
    }

    /// Drops every node while keeping allocations. Handles issued before the
    /// reset are rejected afterwards.
    pub fn reset(&mut self) {
        self.id = fresh_id();
        self.ops.clear();
        self.values.clear();
        self.edge_start.truncate(1);
        self.parents.clear();
        self.partials.clear();
        self.params.clear();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn value(&self, v: Var) -> f64 {
        debug_assert_eq!(v.tape, self.id, "variable from another tape");
        self.values[v.index()]
    }

    pub fn values(&self, vs: &[Var]) -> Vec<f64> {
        vs.iter().map(|&v| self.value(v)).collect()
    }

    pub fn op(&self, v: Var) -> Op {
        self.ops[v.index()]
    }

    /// Parent indices of a node, in recording order.
    pub fn parents_of(&self, v: Var) -> &[u32] {
        let i = v.index();
        let (a, b) = (self.edge_start[i] as usize, self.edge_start[i + 1] as usize);
        &self.parents[a..b]
    }

    pub fn contains(&self, v: Var) -> bool {
        v.tape == self.id && v.index() < self.len()
    }

    fn push(&mut self, op: Op, value: f64, edges: &[(Var, f64)]) -> Var {
        for &(p, d) in edges {
            debug_assert_eq!(p.tape, self.id, "variable from another tape");
            self.parents.push(p.index);
            self.partials.push(d);
        }
        self.finish(op, value)
    }

    fn finish(&mut self, op: Op, value: f64) -> Var {
        let index = self.values.len() as u32;
        self.ops.push(op);
        self.values.push(value);
        self.edge_start.push(self.parents.len() as u32);
        Var { tape: self.id, index }
    }

    /// Registers a trainable scalar; its slot is the registration order.
    pub fn param(&mut self, value: f64) -> Var {
        let v = self.push(Op::Param, value, &[]);
        self.params.push(v.index);
        v
    }

    pub fn params(&mut self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&x| self.param(x)).collect()
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.push(Op::Const, value, &[])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add, v, &[(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub, v, &[(a, 1.0), (b, -1.0)])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.push(Op::Mul, x * y, &[(a, y), (b, x)])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.push(Op::Div, x / y, &[(a, 1.0 / y), (b, -x / (y * y))])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(Op::Neg, -x, &[(a, -1.0)])
    }

    /// `c * a` for a constant `c`.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        self.push(Op::Scale, c * x, &[(a, c)])
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        self.push(Op::Offset, x + c, &[(a, 1.0)])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(Op::Square, x * x, &[(a, 2.0 * x)])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let y = self.value(a).sqrt();
        self.push(Op::Sqrt, y, &[(a, 0.5 / y)])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let y = self.value(a).exp();
        self.push(Op::Exp, y, &[(a, y)])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(Op::Ln, x.ln(), &[(a, 1.0 / x)])
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(Op::Sin, x.sin(), &[(a, x.cos())])
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(Op::Cos, x.cos(), &[(a, -x.sin())])
    }

    /// `a^c` for a constant exponent; `a` must be positive unless `c` is an
    /// integer.
    pub fn powf(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        self.push(Op::Powf, x.powf(c), &[(a, c * x.powf(c - 1.0))])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (y, d) = if x > 0.0 { (x, 1.0) } else { (0.0, 0.0) };
        self.push(Op::Relu, y, &[(a, d)])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = sigmoid(self.value(a));
        self.push(Op::Sigmoid, y, &[(a, y * (1.0 - y))])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let d = if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.push(Op::Abs, x.abs(), &[(a, d)])
    }

    /// `sign(a) * sqrt(|a|)`. The derivative is capped near zero.
    pub fn signed_sqrt(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let r = x.abs().sqrt();
        let y = if x < 0.0 { -r } else { r };
        let d = 0.5 / r.max(1e-6);
        self.push(Op::SignedSqrt, y, &[(a, d)])
    }

    /// Clamps into `[lo, hi]`; the derivative is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let x = self.value(a);
        let (y, d) = if x < lo {
            (lo, 0.0)
        } else if x > hi {
            (hi, 0.0)
        } else {
            (x, 1.0)
        };
        self.push(Op::Clamp, y, &[(a, d)])
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let mut total = 0.0;
        for &x in xs {
            total += self.value(x);
            self.parents.push(x.index);
            self.partials.push(1.0);
        }
        self.finish(Op::Sum, total)
    }

    pub fn mean(&mut self, xs: &[Var]) -> Var {
        let s = self.sum(xs);
        self.scale(s, 1.0 / xs.len() as f64)
    }

    /// `Σ a_i b_i` over two equal-length slices of nodes.
    pub fn dot(&mut self, a: &[Var], b: &[Var]) -> Var {
        assert_eq!(a.len(), b.len(), "dot operands differ in length");
        let mut total = 0.0;
        for (&x, &y) in a.iter().zip(b) {
            let (xv, yv) = (self.value(x), self.value(y));
            total += xv * yv;
            self.parents.push(x.index);
            self.partials.push(yv);
            self.parents.push(y.index);
            self.partials.push(xv);
        }
        self.finish(Op::Dot, total)
    }

    /// `Σ w_i x_i + b` where the `x_i` are constants.
    pub fn affine(&mut self, weights: &[Var], inputs: &[f64], bias: Var) -> Var {
        assert_eq!(weights.len(), inputs.len(), "affine operands differ in length");
        let mut total = self.value(bias);
        for (&w, &x) in weights.iter().zip(inputs) {
            total += self.value(w) * x;
            self.parents.push(w.index);
            self.partials.push(x);
        }
        self.parents.push(bias.index);
        self.partials.push(1.0);
        self.finish(Op::Affine, total)
    }

    /// `Σ w_i a_i + b` where both weights and inputs are nodes.
    pub fn dense(&mut self, weights: &[Var], inputs: &[Var], bias: Var) -> Var {
        let d = self.dot(weights, inputs);
        self.add(d, bias)
    }

    /// Reverse sweep from `root`. The root's own adjoint is exactly 1.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if !self.contains(root) {
            return Err(Error::InvalidNode { index: root.index() });
        }
        let mut adjoints = vec![0.0; root.index() + 1];
        adjoints[root.index()] = 1.0;
        for i in (0..=root.index()).rev() {
            let a = adjoints[i];
            if a == 0.0 {
                continue;
            }
            let (s, e) = (self.edge_start[i] as usize, self.edge_start[i + 1] as usize);
            for k in s..e {
                adjoints[self.parents[k] as usize] += a * self.partials[k];
            }
        }
        adjoints.resize(self.len(), 0.0);
        Ok(Gradients {
            tape: self.id,
            adjoints,
            params: self.params.clone(),
        })
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u32,
    adjoints: Vec<f64>,
    params: Vec<u32>,
}

impl Gradients {
    /// Derivative of the root with respect to `v`.
    pub fn wrt(&self, v: Var) -> f64 {
        debug_assert_eq!(v.tape, self.tape);
        self.adjoints.get(v.index()).copied().unwrap_or(0.0)
    }

    /// Derivative with respect to the parameter registered in `slot`.
    pub fn param(&self, slot: usize) -> f64 {
        self.adjoints[self.params[slot] as usize]
    }

    /// Gradient over all parameter slots, in slot order.
    pub fn params(&self) -> Vec<f64> {
        self.params.iter().map(|&i| self.adjoints[i as usize]).collect()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let p = t.param(3.0);
        let y = t.mul(p, p);
        let g = t.backward(y).unwrap();
        assert_eq!(g.param(0), 6.0);
        assert_eq!(g.wrt(y), 1.0);
    }

    #[test]
    fn inactive_relu_has_zero_gradient() {
        let mut t = Tape::new();
        let p = t.param(-1.0);
        let y = t.relu(p);
        assert_eq!(t.backward(y).unwrap().param(0), 0.0);
    }

    #[test]
    fn kinks_use_zero_subgradient() {
        let mut t = Tape::new();
        let p = t.param(0.0);
        let r = t.relu(p);
        let a = t.abs(p);
        assert_eq!(t.backward(r).unwrap().param(0), 0.0);
        assert_eq!(t.backward(a).unwrap().param(0), 0.0);
    }

    #[test]
    fn foreign_root_is_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let _ = a.param(1.0);
        let x = b.param(1.0);
        assert!(matches!(a.backward(x), Err(Error::InvalidNode { .. })));
        let stale = a.param(2.0);
        a.reset();
        assert!(a.backward(stale).is_err());
    }

    #[test]
    fn parents_precede_children() {
        let mut t = Tape::new();
        let ps = t.params(&[0.3, -1.2, 2.0]);
        let d = t.dot(&ps[..2], &ps[1..]);
        let s = t.sin(d);
        let y = t.affine(&[s, ps[0]], &[2.0, -1.0], ps[2]);
        for i in 0..t.len() {
            let v = Var {
                tape: t.id,
                index: i as u32,
            };
            assert!(t.parents_of(v).iter().all(|&p| (p as usize) < i));
        }
        assert_eq!(t.op(y), Op::Affine);
    }

    #[test]
    fn composite_matches_analytic() {
        // f(a, b) = exp(a) * ln(b) + sqrt(a*b)
        let (a0, b0) = (0.7, 2.5);
        let mut t = Tape::new();
        let a = t.param(a0);
        let b = t.param(b0);
        let ea = t.exp(a);
        let lb = t.ln(b);
        let p = t.mul(ea, lb);
        let ab = t.mul(a, b);
        let s = t.sqrt(ab);
        let f = t.add(p, s);
        let g = t.backward(f).unwrap();
        let r = (a0 * b0).sqrt();
        assert!((g.param(0) - (a0.exp() * b0.ln() + 0.5 * b0 / r)).abs() < 1e-12);
        assert!((g.param(1) - (a0.exp() / b0 + 0.5 * a0 / r)).abs() < 1e-12);
    }
}
