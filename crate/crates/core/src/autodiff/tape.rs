//! Scalar reverse-mode computation graph.
//!
//! Every arithmetic operation on a [`Var`] appends a node holding its value
//! and the local partial derivatives with respect to (at most two) parents.
//! [`Tape::gradient`] then sweeps the nodes once in reverse.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Square,
    Sqrt,
    Tanh,
    Exp,
    Ln,
    Relu,
    Softplus,
}

impl Op {
    pub fn name(self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Square => "square",
            Op::Sqrt => "sqrt",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Relu => "relu",
            Op::Softplus => "softplus",
        }
    }
}

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    value: f64,
    parents: [usize; 2],
    partials: [f64; 2],
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({})", self.index, self.value)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(n)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// An independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(Op::Leaf, value, [NONE, NONE], [0.0, 0.0])
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Const, value, [NONE, NONE], [0.0, 0.0])
    }

    fn push(&self, op: Op, value: f64, parents: [usize; 2], partials: [f64; 2]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node {
            op,
            value,
            parents,
            partials,
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    fn unary(&self, op: Op, x: Var<'_>, value: f64, partial: f64) -> Var<'_> {
        self.push(op, value, [x.index, NONE], [partial, 0.0])
    }

    fn binary(&self, op: Op, a: Var<'_>, b: Var<'_>, value: f64, da: f64, db: f64) -> Var<'_> {
        self.push(op, value, [a.index, b.index], [da, db])
    }

    /// Sum of many variables as a balanced chain of additions.
    pub fn sum<'t>(&'t self, terms: impl IntoIterator<Item = Var<'t>>) -> Var<'t> {
        let mut acc: Option<Var<'t>> = None;
        for t in terms {
            acc = Some(match acc {
                None => t,
                Some(a) => a + t,
            });
        }
        acc.unwrap_or_else(|| self.constant(0.0))
    }

    /// Adjoints of every node with respect to `output`.
    pub fn gradient(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if let Some(bad) = nodes[..=output.index].iter().find(|n| !n.value.is_finite()) {
            return Err(Error::PoisonedGradient(bad.op.name()));
        }
        let mut adj = vec![0.0; output.index + 1];
        adj[output.index] = 1.0;
        for i in (0..=output.index).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p == NONE {
                    continue;
                }
                let c = a * node.partials[k];
                if !c.is_finite() {
                    return Err(Error::PoisonedGradient(node.op.name()));
                }
                adj[p] += c;
            }
        }
        Ok(Gradients { adjoints: adj })
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    /// `d output / d var`; zero for nodes created after the output.
    pub fn wrt(&self, var: Var<'_>) -> f64 {
        self.adjoints.get(var.index).copied().unwrap_or(0.0)
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn square(self) -> Self {
        self.tape
            .unary(Op::Square, self, self.value * self.value, 2.0 * self.value)
    }

    /// Square root; the derivative at exactly zero is taken as zero.
    pub fn sqrt(self) -> Self {
        let v = self.value.sqrt();
        let d = if v > 0.0 { 0.5 / v } else { 0.0 };
        self.tape.unary(Op::Sqrt, self, v, d)
    }

    pub fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.tape.unary(Op::Tanh, self, t, 1.0 - t * t)
    }

    pub fn exp(self) -> Self {
        let e = self.value.exp();
        self.tape.unary(Op::Exp, self, e, e)
    }

    pub fn ln(self) -> Self {
        self.tape
            .unary(Op::Ln, self, self.value.ln(), 1.0 / self.value)
    }

    /// `max(x, 0)`; the derivative at zero is zero.
    pub fn relu(self) -> Self {
        let (v, d) = if self.value > 0.0 {
            (self.value, 1.0)
        } else {
            (0.0, 0.0)
        };
        self.tape.unary(Op::Relu, self, v, d)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Self {
        let x = self.value;
        self.tape.unary(Op::Softplus, self, softplus(x), sigmoid(x))
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inverse(y: f64) -> f64 {
    // ln(e^y - 1) = y + ln(1 - e^-y)
    y + (-(-y).exp()).ln_1p()
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.tape
            .binary(Op::Add, self, rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.tape
            .binary(Op::Sub, self, rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.tape.binary(
            Op::Mul,
            self,
            rhs,
            self.value * rhs.value,
            rhs.value,
            self.value,
        )
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        self.tape
            .binary(Op::Div, self, rhs, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.tape.unary(Op::Neg, self, -self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Self {
        self.tape.unary(Op::Add, self, self.value + c, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Self {
        self.tape.unary(Op::Sub, self, self.value - c, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Self {
        self.tape.unary(Op::Mul, self, self.value * c, c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Self {
        self.tape.unary(Op::Div, self, self.value / c, 1.0 / c)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, v: Var<'t>) -> Var<'t> {
        v + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, v: Var<'t>) -> Var<'t> {
        v.tape.unary(Op::Sub, v, self - v.value, -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, v: Var<'t>) -> Var<'t> {
        v * self
    }
}
