//! Reverse-mode automatic differentiation over a scalar tape.
//!
//! Every operation appends one node holding its forward value, the indices of
//! its parents and the local partial derivative with respect to each parent.
//! Parents always precede their children, so a single reverse sweep over the
//! node list accumulates adjoints for every node reachable from the output.
//!
//! ```
//! use hallunav::autodiff::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.var(3.0);
//! let y = tape.var(4.0);
//! let f = tape.mul(x, y);
//! let grads = tape.backward(f).unwrap();
//! assert_eq!(f.value(), 12.0);
//! assert_eq!(grads.wrt(x), 4.0);
//! assert_eq!(grads.wrt(y), 3.0);
//! ```
//!
//! Subgradient conventions: `relu'(0) = 0`, `max(a, 0)'(0) = 0`, and a
//! `select` passes the adjoint to the chosen branch only.

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("value belongs to tape {found}, expected tape {expected}")]
    MixedTapes { expected: u64, found: u64 },
    #[error("{op} of non-positive argument {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("{op} expects {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("node {0} is not on this tape")]
    UnknownNode(u32),
}

/// Kind of a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Input,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Tanh,
    Relu,
    Sqrt,
    /// `max(x, 0)`; same map as relu, kept separate for readability of hinge losses.
    MaxZero,
    Square,
    Sin,
    Cos,
    /// `atan2(y, x)` with inputs `[y, x]`.
    Atan2,
    /// Inputs `[cond, a, b]`: `a` when `cond > 0`, else `b`.
    Select,
    Sum,
    /// Inputs `[a_0..a_n, b_0..b_n]`, value `Σ a_i b_i`.
    Dot,
    /// Constant-coefficient affine combination; the coefficients are the stored partials.
    Linear,
}

/// A scalar recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    value: f64,
    node: u32,
    tape: u64,
}

impl Dual {
    pub fn value(self) -> f64 {
        self.value
    }

    pub fn node(self) -> u32 {
        self.node
    }

    pub fn tape_id(self) -> u64 {
        self.tape
    }
}

/// Adjoints of one output with respect to every node of the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    adjoints: Vec<f64>,
}

impl Gradients {
    /// Derivative of the output with respect to `x`. Nodes recorded after the
    /// output have zero derivative.
    pub fn wrt(&self, x: Dual) -> f64 {
        assert_eq!(x.tape, self.tape, "gradient queried with a value from another tape");
        self.adjoints.get(x.node as usize).copied().unwrap_or(0.0)
    }

    pub fn get(&self, node: u32) -> f64 {
        self.adjoints.get(node as usize).copied().unwrap_or(0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.adjoints
    }
}

/// Append-only node store. Single writer; distinct tapes are independent.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    values: Vec<f64>,
    kinds: Vec<OpKind>,
    // offsets[n]..offsets[n + 1] indexes parents/partials of node n
    offsets: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    // bias term of Linear nodes, zero elsewhere
    aux: Vec<f64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: fresh_id(),
            values: Vec::new(),
            kinds: Vec::new(),
            offsets: vec![0],
            parents: Vec::new(),
            partials: Vec::new(),
            aux: Vec::new(),
        }
    }

    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        let mut tape = Self::new();
        tape.values.reserve(nodes);
        tape.kinds.reserve(nodes);
        tape.offsets.reserve(nodes + 1);
        tape.aux.reserve(nodes);
        tape.parents.reserve(edges);
        tape.partials.reserve(edges);
        tape
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Drops every node. Values recorded before the call become foreign to this tape.
    pub fn clear(&mut self) {
        self.id = fresh_id();
        self.values.clear();
        self.kinds.clear();
        self.offsets.truncate(1);
        self.parents.clear();
        self.partials.clear();
        self.aux.clear();
    }

    pub fn kind(&self, node: u32) -> Option<OpKind> {
        self.kinds.get(node as usize).copied()
    }

    pub fn value_of(&self, node: u32) -> Option<f64> {
        self.values.get(node as usize).copied()
    }

    /// Parent indices and local partials of a node.
    pub fn edges(&self, node: u32) -> Option<(&[u32], &[f64])> {
        let n = node as usize;
        if n >= self.values.len() {
            return None;
        }
        let (a, b) = (self.offsets[n] as usize, self.offsets[n + 1] as usize);
        Some((&self.parents[a..b], &self.partials[a..b]))
    }

    #[inline]
    fn push(&mut self, kind: OpKind, value: f64, aux: f64) -> Dual {
        let node = self.values.len() as u32;
        self.values.push(value);
        self.kinds.push(kind);
        self.aux.push(aux);
        self.offsets.push(self.parents.len() as u32);
        Dual {
            value,
            node,
            tape: self.id,
        }
    }

    #[inline]
    fn edge(&mut self, parent: Dual, partial: f64) {
        self.parents.push(parent.node);
        self.partials.push(partial);
    }

    #[inline]
    fn check(&self, x: Dual) -> Result<(), AutodiffError> {
        if x.tape != self.id {
            return Err(AutodiffError::MixedTapes {
                expected: self.id,
                found: x.tape,
            });
        }
        Ok(())
    }

    #[inline]
    fn same(&self, x: Dual) {
        if let Err(e) = self.check(x) {
            panic!("{e}");
        }
    }

    /// A leaf value. Constants are leaves whose adjoint is simply ignored.
    pub fn var(&mut self, value: f64) -> Dual {
        self.push(OpKind::Input, value, 0.0)
    }

    pub fn constant(&mut self, value: f64) -> Dual {
        self.var(value)
    }

    /// Checked generic entry point: records `kind` applied to `inputs`.
    ///
    /// `Linear` nodes carry coefficients and are recorded via [`Tape::linear`].
    pub fn record(&mut self, kind: OpKind, inputs: &[Dual]) -> Result<Dual, AutodiffError> {
        for &x in inputs {
            self.check(x)?;
        }
        let arity = |expected: usize| {
            if inputs.len() != expected {
                Err(AutodiffError::Arity {
                    op: op_name(kind),
                    expected,
                    got: inputs.len(),
                })
            } else {
                Ok(())
            }
        };
        match kind {
            OpKind::Input => {
                arity(0)?;
                Ok(self.var(0.0))
            }
            OpKind::Add => {
                arity(2)?;
                Ok(self.add(inputs[0], inputs[1]))
            }
            OpKind::Sub => {
                arity(2)?;
                Ok(self.sub(inputs[0], inputs[1]))
            }
            OpKind::Mul => {
                arity(2)?;
                Ok(self.mul(inputs[0], inputs[1]))
            }
            OpKind::Div => {
                arity(2)?;
                Ok(self.div(inputs[0], inputs[1]))
            }
            OpKind::Neg => {
                arity(1)?;
                Ok(self.neg(inputs[0]))
            }
            OpKind::Exp => {
                arity(1)?;
                Ok(self.exp(inputs[0]))
            }
            OpKind::Ln => {
                arity(1)?;
                self.ln(inputs[0])
            }
            OpKind::Tanh => {
                arity(1)?;
                Ok(self.tanh(inputs[0]))
            }
            OpKind::Relu => {
                arity(1)?;
                Ok(self.relu(inputs[0]))
            }
            OpKind::Sqrt => {
                arity(1)?;
                self.sqrt(inputs[0])
            }
            OpKind::MaxZero => {
                arity(1)?;
                Ok(self.max0(inputs[0]))
            }
            OpKind::Square => {
                arity(1)?;
                Ok(self.square(inputs[0]))
            }
            OpKind::Sin => {
                arity(1)?;
                Ok(self.sin(inputs[0]))
            }
            OpKind::Cos => {
                arity(1)?;
                Ok(self.cos(inputs[0]))
            }
            OpKind::Atan2 => {
                arity(2)?;
                Ok(self.atan2(inputs[0], inputs[1]))
            }
            OpKind::Select => {
                arity(3)?;
                Ok(self.select(inputs[0], inputs[1], inputs[2]))
            }
            OpKind::Sum => Ok(self.sum(inputs)),
            OpKind::Dot => {
                if inputs.len() % 2 != 0 {
                    return Err(AutodiffError::Arity {
                        op: "dot",
                        expected: inputs.len() + 1,
                        got: inputs.len(),
                    });
                }
                let (a, b) = inputs.split_at(inputs.len() / 2);
                Ok(self.dot(a, b))
            }
            OpKind::Linear => {
                let ones = vec![1.0; inputs.len()];
                Ok(self.linear(inputs, &ones, 0.0))
            }
        }
    }

    pub fn add(&mut self, a: Dual, b: Dual) -> Dual {
        self.same(a);
        self.same(b);
        let d = self.push(OpKind::Add, a.value + b.value, 0.0);
        self.edge(a, 1.0);
        self.edge(b, 1.0);
        self.seal(d)
    }

    pub fn sub(&mut self, a: Dual, b: Dual) -> Dual {
        self.same(a);
        self.same(b);
        let d = self.push(OpKind::Sub, a.value - b.value, 0.0);
        self.edge(a, 1.0);
        self.edge(b, -1.0);
        self.seal(d)
    }

    pub fn mul(&mut self, a: Dual, b: Dual) -> Dual {
        self.same(a);
        self.same(b);
        let d = self.push(OpKind::Mul, a.value * b.value, 0.0);
        self.edge(a, b.value);
        self.edge(b, a.value);
        self.seal(d)
    }

    pub fn div(&mut self, a: Dual, b: Dual) -> Dual {
        self.same(a);
        self.same(b);
        let q = a.value / b.value;
        let d = self.push(OpKind::Div, q, 0.0);
        self.edge(a, 1.0 / b.value);
        self.edge(b, -q / b.value);
        self.seal(d)
    }

    pub fn neg(&mut self, a: Dual) -> Dual {
        self.unary(OpKind::Neg, a, -a.value, -1.0)
    }

    pub fn exp(&mut self, a: Dual) -> Dual {
        let e = a.value.exp();
        self.unary(OpKind::Exp, a, e, e)
    }

    pub fn ln(&mut self, a: Dual) -> Result<Dual, AutodiffError> {
        self.check(a)?;
        if a.value <= 0.0 || a.value.is_nan() {
            return Err(AutodiffError::Domain {
                op: "ln",
                value: a.value,
            });
        }
        Ok(self.unary(OpKind::Ln, a, a.value.ln(), 1.0 / a.value))
    }

    pub fn sqrt(&mut self, a: Dual) -> Result<Dual, AutodiffError> {
        self.check(a)?;
        if a.value <= 0.0 || a.value.is_nan() {
            return Err(AutodiffError::Domain {
                op: "sqrt",
                value: a.value,
            });
        }
        let s = a.value.sqrt();
        Ok(self.unary(OpKind::Sqrt, a, s, 0.5 / s))
    }

    pub fn tanh(&mut self, a: Dual) -> Dual {
        let t = a.value.tanh();
        self.unary(OpKind::Tanh, a, t, 1.0 - t * t)
    }

    pub fn relu(&mut self, a: Dual) -> Dual {
        let (v, g) = if a.value > 0.0 { (a.value, 1.0) } else { (0.0, 0.0) };
        self.unary(OpKind::Relu, a, v, g)
    }

    pub fn max0(&mut self, a: Dual) -> Dual {
        let (v, g) = if a.value > 0.0 { (a.value, 1.0) } else { (0.0, 0.0) };
        self.unary(OpKind::MaxZero, a, v, g)
    }

    pub fn square(&mut self, a: Dual) -> Dual {
        self.unary(OpKind::Square, a, a.value * a.value, 2.0 * a.value)
    }

    pub fn sin(&mut self, a: Dual) -> Dual {
        self.unary(OpKind::Sin, a, a.value.sin(), a.value.cos())
    }

    pub fn cos(&mut self, a: Dual) -> Dual {
        self.unary(OpKind::Cos, a, a.value.cos(), -a.value.sin())
    }

    /// `atan2(y, x)`. At the origin the partials are taken as zero.
    pub fn atan2(&mut self, y: Dual, x: Dual) -> Dual {
        self.same(y);
        self.same(x);
        let r2 = x.value * x.value + y.value * y.value;
        let (gy, gx) = if r2 > 0.0 {
            (x.value / r2, -y.value / r2)
        } else {
            (0.0, 0.0)
        };
        let d = self.push(OpKind::Atan2, y.value.atan2(x.value), 0.0);
        self.edge(y, gy);
        self.edge(x, gx);
        self.seal(d)
    }

    /// `a` if `cond > 0`, otherwise `b`. The gate itself receives no gradient.
    pub fn select(&mut self, cond: Dual, a: Dual, b: Dual) -> Dual {
        self.same(cond);
        self.same(a);
        self.same(b);
        let take_a = cond.value > 0.0;
        let d = self.push(OpKind::Select, if take_a { a.value } else { b.value }, 0.0);
        self.edge(cond, 0.0);
        self.edge(a, if take_a { 1.0 } else { 0.0 });
        self.edge(b, if take_a { 0.0 } else { 1.0 });
        self.seal(d)
    }

    pub fn sum(&mut self, xs: &[Dual]) -> Dual {
        let mut acc = 0.0;
        for &x in xs {
            self.same(x);
            acc += x.value;
        }
        let d = self.push(OpKind::Sum, acc, 0.0);
        for &x in xs {
            self.edge(x, 1.0);
        }
        self.seal(d)
    }

    /// `Σ a_i b_i` as one node with `2n` parents.
    pub fn dot(&mut self, a: &[Dual], b: &[Dual]) -> Dual {
        assert_eq!(a.len(), b.len(), "dot of unequal lengths");
        let mut acc = 0.0;
        for (&x, &y) in a.iter().zip(b) {
            self.same(x);
            self.same(y);
            acc += x.value * y.value;
        }
        let d = self.push(OpKind::Dot, acc, 0.0);
        for (&x, &y) in a.iter().zip(b) {
            self.edge(x, y.value);
        }
        for (&x, &y) in a.iter().zip(b) {
            self.edge(y, x.value);
        }
        self.seal(d)
    }

    /// `bias + Σ coeffs_i x_i` with constant coefficients.
    pub fn linear(&mut self, xs: &[Dual], coeffs: &[f64], bias: f64) -> Dual {
        assert_eq!(xs.len(), coeffs.len(), "linear of unequal lengths");
        let mut acc = bias;
        for (&x, &c) in xs.iter().zip(coeffs) {
            self.same(x);
            acc += c * x.value;
        }
        let d = self.push(OpKind::Linear, acc, bias);
        for (&x, &c) in xs.iter().zip(coeffs) {
            self.edge(x, c);
        }
        self.seal(d)
    }

    pub fn add_const(&mut self, a: Dual, c: f64) -> Dual {
        self.linear(&[a], &[1.0], c)
    }

    pub fn scale(&mut self, a: Dual, c: f64) -> Dual {
        self.linear(&[a], &[c], 0.0)
    }

    #[inline]
    fn unary(&mut self, kind: OpKind, a: Dual, value: f64, partial: f64) -> Dual {
        self.same(a);
        let d = self.push(kind, value, 0.0);
        self.edge(a, partial);
        self.seal(d)
    }

    #[inline]
    fn seal(&mut self, d: Dual) -> Dual {
        *self.offsets.last_mut().unwrap() = self.parents.len() as u32;
        d
    }

    /// One reverse sweep from `output` back to the first node.
    pub fn backward(&self, output: Dual) -> Result<Gradients, AutodiffError> {
        self.check(output)?;
        let out = output.node as usize;
        if out >= self.values.len() {
            return Err(AutodiffError::UnknownNode(output.node));
        }
        let mut adjoints = vec![0.0; out + 1];
        adjoints[out] = 1.0;
        for n in (0..=out).rev() {
            let a = adjoints[n];
            if a == 0.0 {
                continue;
            }
            let (lo, hi) = (self.offsets[n] as usize, self.offsets[n + 1] as usize);
            for k in lo..hi {
                adjoints[self.parents[k] as usize] += a * self.partials[k];
            }
        }
        Ok(Gradients {
            tape: self.id,
            adjoints,
        })
    }

    /// Recomputes every node's value from its kind and its parents' stored values.
    pub fn replay(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::with_capacity(self.values.len());
        for n in 0..self.values.len() {
            let (lo, hi) = (self.offsets[n] as usize, self.offsets[n + 1] as usize);
            let p = &self.parents[lo..hi];
            let v = |i: usize| out[p[i] as usize];
            let value = match self.kinds[n] {
                OpKind::Input => self.values[n],
                OpKind::Add => v(0) + v(1),
                OpKind::Sub => v(0) - v(1),
                OpKind::Mul => v(0) * v(1),
                OpKind::Div => v(0) / v(1),
                OpKind::Neg => -v(0),
                OpKind::Exp => v(0).exp(),
                OpKind::Ln => v(0).ln(),
                OpKind::Tanh => v(0).tanh(),
                OpKind::Relu | OpKind::MaxZero => {
                    if v(0) > 0.0 {
                        v(0)
                    } else {
                        0.0
                    }
                }
                OpKind::Sqrt => v(0).sqrt(),
                OpKind::Square => v(0) * v(0),
                OpKind::Sin => v(0).sin(),
                OpKind::Cos => v(0).cos(),
                OpKind::Atan2 => v(0).atan2(v(1)),
                OpKind::Select => {
                    if v(0) > 0.0 {
                        v(1)
                    } else {
                        v(2)
                    }
                }
                OpKind::Sum => (0..p.len()).fold(0.0, |acc, i| acc + v(i)),
                OpKind::Dot => {
                    let h = p.len() / 2;
                    (0..h).fold(0.0, |acc, i| acc + v(i) * v(h + i))
                }
                OpKind::Linear => {
                    let c = &self.partials[lo..hi];
                    (0..p.len()).fold(self.aux[n], |acc, i| acc + c[i] * v(i))
                }
            };
            out.push(value);
        }
        out
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn op_name(kind: OpKind) -> &'static str {
    match kind {
        OpKind::Input => "input",
        OpKind::Add => "add",
        OpKind::Sub => "sub",
        OpKind::Mul => "mul",
        OpKind::Div => "div",
        OpKind::Neg => "neg",
        OpKind::Exp => "exp",
        OpKind::Ln => "ln",
        OpKind::Tanh => "tanh",
        OpKind::Relu => "relu",
        OpKind::Sqrt => "sqrt",
        OpKind::MaxZero => "max0",
        OpKind::Square => "square",
        OpKind::Sin => "sin",
        OpKind::Cos => "cos",
        OpKind::Atan2 => "atan2",
        OpKind::Select => "select",
        OpKind::Sum => "sum",
        OpKind::Dot => "dot",
        OpKind::Linear => "linear",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn partials_of(tape: &Tape, d: Dual) -> Vec<f64> {
        tape.edges(d.node()).unwrap().1.to_vec()
    }

    #[test]
    fn mul_records_product_rule_partials() {
        let mut t = Tape::new();
        let x = t.var(3.0);
        let y = t.var(4.0);
        let f = t.record(OpKind::Mul, &[x, y]).unwrap();
        assert_eq!(f.value(), 12.0);
        assert_eq!(partials_of(&t, f), vec![4.0, 3.0]);
    }

    #[test]
    fn relu_of_negative_is_flat() {
        let mut t = Tape::new();
        let x = t.var(-2.0);
        let f = t.record(OpKind::Relu, &[x]).unwrap();
        assert_eq!(f.value(), 0.0);
        assert_eq!(partials_of(&t, f), vec![0.0]);
    }

    #[test]
    fn exp_at_zero() {
        let mut t = Tape::new();
        let x = t.var(0.0);
        let f = t.record(OpKind::Exp, &[x]).unwrap();
        assert_eq!(f.value(), 1.0);
        assert_eq!(partials_of(&t, f), vec![1.0]);
    }

    #[test]
    fn hinge_square_gradient() {
        let mut t = Tape::new();
        let x = t.var(0.3);
        let h = t.linear(&[x], &[-1.0], 0.5);
        let h = t.max0(h);
        let f = t.square(h);
        let g = t.backward(f).unwrap();
        assert!((g.wrt(x) - (-0.4)).abs() < 1e-12);
    }

    #[test]
    fn mixed_tapes_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.var(1.0);
        let y = b.var(2.0);
        assert!(matches!(
            a.record(OpKind::Add, &[x, y]),
            Err(AutodiffError::MixedTapes { .. })
        ));
        assert!(b.backward(x).is_err());
    }

    #[test]
    fn cleared_tape_forgets_old_values() {
        let mut t = Tape::new();
        let x = t.var(1.0);
        t.clear();
        assert!(t.is_empty());
        assert!(t.record(OpKind::Neg, &[x]).is_err());
    }

    #[test]
    fn domain_errors() {
        let mut t = Tape::new();
        let z = t.var(0.0);
        let n = t.var(-1.0);
        assert!(matches!(t.ln(z), Err(AutodiffError::Domain { op: "ln", .. })));
        assert!(matches!(t.sqrt(n), Err(AutodiffError::Domain { op: "sqrt", .. })));
        assert!(t.record(OpKind::Sqrt, &[z]).is_err());
    }

    #[test]
    fn arity_checked() {
        let mut t = Tape::new();
        let x = t.var(1.0);
        assert!(matches!(
            t.record(OpKind::Add, &[x]),
            Err(AutodiffError::Arity { .. })
        ));
    }

    #[test]
    fn select_routes_gradient_to_chosen_branch() {
        let mut t = Tape::new();
        let c = t.var(1.0);
        let a = t.var(2.0);
        let b = t.var(3.0);
        let s = t.select(c, a, b);
        let f = t.mul(s, s);
        let g = t.backward(f).unwrap();
        assert_eq!(f.value(), 4.0);
        assert_eq!(g.wrt(a), 4.0);
        assert_eq!(g.wrt(b), 0.0);
        assert_eq!(g.wrt(c), 0.0);
    }

    #[test]
    fn dot_and_linear() {
        let mut t = Tape::new();
        let a: Vec<Dual> = [1.0, 2.0].iter().map(|&v| t.var(v)).collect();
        let b: Vec<Dual> = [3.0, 5.0].iter().map(|&v| t.var(v)).collect();
        let d = t.dot(&a, &b);
        let l = t.linear(&[d, a[0]], &[2.0, -1.0], 0.5);
        assert_eq!(l.value(), 2.0 * 13.0 - 1.0 + 0.5);
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(a[0]), 2.0 * 3.0 - 1.0);
        assert_eq!(g.wrt(b[1]), 2.0 * 2.0);
    }

    #[test]
    fn replay_reproduces_values() {
        let mut t = Tape::new();
        let x = t.var(0.7);
        let y = t.var(-1.3);
        let a = t.atan2(y, x);
        let b = t.tanh(a);
        let c = t.linear(&[a, b], &[0.3, 2.0], 3.0);
        let s = t.sqrt(c).unwrap();
        let _ = t.sum(&[s, x, y]);
        let replayed = t.replay();
        assert_eq!(replayed.len(), t.len());
        for (r, v) in replayed.iter().zip(t.values()) {
            assert_eq!(r.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn backward_twice_identical() {
        let mut t = Tape::new();
        let x = t.var(0.4);
        let e = t.exp(x);
        let f = t.mul(e, x);
        let g1 = t.backward(f).unwrap();
        let g2 = t.backward(f).unwrap();
        assert_eq!(g1.as_slice(), g2.as_slice());
    }
}
