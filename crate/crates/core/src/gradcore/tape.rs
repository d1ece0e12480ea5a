//! Scalar reverse-mode tape.
//!
//! Every arithmetic operation on a [`Var`] appends a node holding its value
//! and the local partial derivatives with respect to its (at most two)
//! parents. [`Tape::gradient`] sweeps the nodes backwards once.
//!
//! ```
//! use rbnn_core::gradcore::tape::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.var(3.0);
//! let y = x * x + 2.0 * x;
//! let adj = tape.gradient(y).unwrap();
//! assert_eq!(adj[x.index()], 8.0);
//! ```

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{sigmoid, softplus, GradError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Input,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Relu,
    Softplus,
    Abs,
    Sqrt,
    Max,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Op::Input => "input",
            Op::Const => "const",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Relu => "relu",
            Op::Softplus => "softplus",
            Op::Abs => "abs",
            Op::Sqrt => "sqrt",
            Op::Max => "max",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: f64,
    parents: [(usize, f64); 2],
    arity: u8,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({})", self.idx, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: f64, parents: &[(usize, f64)]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let mut p = [(0, 0.0); 2];
        p[..parents.len()].copy_from_slice(parents);
        nodes.push(Node {
            op,
            value,
            parents: p,
            arity: parents.len() as u8,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    /// Independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(Op::Input, value, &[])
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Const, value, &[])
    }

    pub fn sum<'t>(&'t self, xs: &[Var<'t>]) -> Var<'t> {
        xs.iter()
            .copied()
            .reduce(|a, b| a + b)
            .unwrap_or_else(|| self.constant(0.0))
    }

    /// First node (in creation order) holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<(usize, Op)> {
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
            .map(|(i, n)| (i, n.op))
    }

    /// Adjoints d(output)/d(node) for every node on the tape.
    pub fn gradient(&self, output: Var<'_>) -> Result<Vec<f64>, GradError> {
        let nodes = self.nodes.borrow();
        if let Some((idx, n)) = nodes[..=output.idx]
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
        {
            return Err(GradError::NonFinite {
                node: idx,
                op: n.op.to_string(),
            });
        }
        let mut adj = vec![0.0; nodes.len()];
        adj[output.idx] = 1.0;
        for i in (0..=output.idx).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for &(parent, partial) in &node.parents[..node.arity as usize] {
                adj[parent] += a * partial;
            }
        }
        Ok(adj)
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.tape.nodes.borrow()[self.idx].value
    }

    pub fn index(&self) -> usize {
        self.idx
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, op: Op, value: f64, partial: f64) -> Var<'t> {
        self.tape.push(op, value, &[(self.idx, partial)])
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value().exp();
        self.unary(Op::Exp, v, v)
    }

    pub fn ln(self) -> Var<'t> {
        let x = self.value();
        self.unary(Op::Ln, x.ln(), 1.0 / x)
    }

    pub fn relu(self) -> Var<'t> {
        let x = self.value();
        if x > 0.0 {
            self.unary(Op::Relu, x, 1.0)
        } else {
            self.unary(Op::Relu, 0.0, 0.0)
        }
    }

    pub fn softplus(self) -> Var<'t> {
        let x = self.value();
        self.unary(Op::Softplus, softplus(x), sigmoid(x))
    }

    pub fn abs(self) -> Var<'t> {
        let x = self.value();
        let d = if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(Op::Abs, x.abs(), d)
    }

    pub fn sqrt(self) -> Var<'t> {
        let v = self.value().sqrt();
        self.unary(Op::Sqrt, v, 0.5 / v)
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }

    /// `max(self, floor)`; the gradient is zero when the floor is active.
    pub fn max_const(self, floor: f64) -> Var<'t> {
        let x = self.value();
        if x >= floor {
            self.unary(Op::Max, x, 1.0)
        } else {
            self.unary(Op::Max, floor, 0.0)
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.push(
            Op::Add,
            self.value() + rhs.value(),
            &[(self.idx, 1.0), (rhs.idx, 1.0)],
        )
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.push(
            Op::Sub,
            self.value() - rhs.value(),
            &[(self.idx, 1.0), (rhs.idx, -1.0)],
        )
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        self.tape
            .push(Op::Mul, a * b, &[(self.idx, b), (rhs.idx, a)])
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        self.tape.push(
            Op::Div,
            a / b,
            &[(self.idx, 1.0 / b), (rhs.idx, -a / (b * b))],
        )
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        let x = self.value();
        self.unary(Op::Neg, -x, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        let x = self.value();
        self.unary(Op::Add, x + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        let x = self.value();
        self.unary(Op::Sub, x - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        let x = self.value();
        self.unary(Op::Mul, x * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        let x = self.value();
        self.unary(Op::Div, x / rhs, 1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        let x = rhs.value();
        rhs.unary(Op::Sub, self - x, -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

/// Gradient of a scalar function built on a fresh tape, evaluated at `at`.
///
/// The closure receives one input variable per entry of `at` and must return
/// the loss node. A non-finite value anywhere on the path to the loss is
/// reported with the index and operation of the first offending node.
pub fn grad<F>(loss: F, at: &[f64]) -> Result<Vec<f64>, GradError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let inputs: Vec<Var<'_>> = at.iter().map(|&v| tape.var(v)).collect();
    let out = loss(&tape, &inputs);
    let adj = tape.gradient(out)?;
    Ok(inputs.iter().map(|v| adj[v.idx]).collect())
}
