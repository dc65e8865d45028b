//! Minimal reverse-mode automatic differentiation on a tape.
//!
//! Model code is written once, generic over [`Scalar`]; instantiated at
//! `f64` it is a plain forward evaluation, instantiated at [`Var`] every
//! operation records its local partials on a [`Tape`] and a single reverse
//! sweep yields exact derivatives with respect to all leaves. Constants
//! never touch the tape, so lifting literals inside hot loops is free.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// The scalar abstraction shared by plain evaluation and tape recording.
pub trait Scalar:
    Copy
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn value(self) -> f64;
    /// A constant in the same evaluation context as `self`.
    fn lift(self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    /// `self * c` for a plain constant factor.
    fn scale(self, c: f64) -> Self;
}

impl Scalar for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, c: f64) -> Self {
        c
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
}

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

const CONST_IDX: u32 = u32::MAX;

/// Append-only record of operations; cleared by dropping.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(CONST_IDX, 0.0, CONST_IDX, 0.0);
        Var {
            tape: self,
            idx,
            val: value,
        }
    }

    /// A constant: participates in arithmetic but records nothing.
    pub fn constant(&self, value: f64) -> Var<'_> {
        Var {
            tape: self,
            idx: CONST_IDX,
            val: value,
        }
    }

    fn push(&self, p0: u32, d0: f64, p1: u32, d1: f64) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        assert!(idx < CONST_IDX as usize, "tape overflow");
        nodes.push(Node {
            parents: [p0, p1],
            partials: [d0, d1],
        });
        idx as u32
    }

    /// Reverse sweep from `output`; returns the derivative of `output`
    /// with respect to each requested variable (0 for constants).
    pub fn gradient(&self, output: Var<'_>, wrt: &[Var<'_>]) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0f64; nodes.len()];
        if output.idx != CONST_IDX {
            adjoint[output.idx as usize] = 1.0;
            for i in (0..nodes.len()).rev() {
                let a = adjoint[i];
                if a == 0.0 {
                    continue;
                }
                let node = nodes[i];
                for s in 0..2 {
                    let p = node.parents[s];
                    if p != CONST_IDX {
                        adjoint[p as usize] += node.partials[s] * a;
                    }
                }
            }
        }
        wrt.iter()
            .map(|v| {
                if v.idx == CONST_IDX {
                    0.0
                } else {
                    adjoint[v.idx as usize]
                }
            })
            .collect()
    }
}

/// A value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl<'t> Var<'t> {
    fn unary(self, val: f64, partial: f64) -> Self {
        if self.idx == CONST_IDX {
            return Var {
                tape: self.tape,
                idx: CONST_IDX,
                val,
            };
        }
        let idx = self.tape.push(self.idx, partial, CONST_IDX, 0.0);
        Var {
            tape: self.tape,
            idx,
            val,
        }
    }

    fn binary(self, other: Self, val: f64, d_self: f64, d_other: f64) -> Self {
        if self.idx == CONST_IDX && other.idx == CONST_IDX {
            return Var {
                tape: self.tape,
                idx: CONST_IDX,
                val,
            };
        }
        let idx = self
            .tape
            .push(self.idx, d_self, other.idx, d_other);
        Var {
            tape: self.tape,
            idx,
            val,
        }
    }
}

impl PartialEq for Var<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.val == other.val
    }
}

impl PartialOrd for Var<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.val.partial_cmp(&other.val)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        self.binary(
            rhs,
            self.val / rhs.val,
            1.0 / rhs.val,
            -self.val / (rhs.val * rhs.val),
        )
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Scalar for Var<'t> {
    fn value(self) -> f64 {
        self.val
    }
    fn lift(self, c: f64) -> Self {
        self.tape.constant(c)
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }
    fn sqrt(self) -> Self {
        let r = self.val.sqrt();
        self.unary(r, 0.5 / r)
    }
    fn scale(self, c: f64) -> Self {
        self.unary(self.val * c, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn test_fn<S: Scalar>(x: S, y: S) -> S {
        // f = exp(x * y) + sqrt(x / y) - ln(y) * 3
        let a = (x * y).exp();
        let b = (x / y).sqrt();
        a + b - y.ln().scale(3.0)
    }

    #[test]
    fn matches_f64_evaluation() {
        let tape = Tape::new();
        let x = tape.var(0.7);
        let y = tape.var(1.3);
        assert_eq!(test_fn(x, y).value(), test_fn(0.7f64, 1.3f64));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let tape = Tape::new();
        let x = tape.var(0.7);
        let y = tape.var(1.3);
        let out = test_fn(x, y);
        let grad = tape.gradient(out, &[x, y]);
        let h = 1e-7;
        let fx = (test_fn(0.7 + h, 1.3) - test_fn(0.7 - h, 1.3)) / (2.0 * h);
        let fy = (test_fn(0.7, 1.3 + h) - test_fn(0.7, 1.3 - h)) / (2.0 * h);
        assert_relative_eq!(grad[0], fx, epsilon = 1e-6);
        assert_relative_eq!(grad[1], fy, epsilon = 1e-6);
    }

    #[test]
    fn constants_stay_off_the_tape() {
        let tape = Tape::new();
        let c1 = tape.constant(2.0);
        let c2 = tape.constant(3.0);
        let _ = c1 * c2 + c1;
        assert!(tape.is_empty());
        let x = tape.var(1.0);
        let before = tape.len();
        let _ = x + x.lift(5.0);
        assert_eq!(tape.len(), before + 1);
    }

    #[test]
    fn fan_out_accumulates() {
        // f = x*x + x => f' = 2x + 1
        let tape = Tape::new();
        let x = tape.var(3.0);
        let f = x * x + x;
        let grad = tape.gradient(f, &[x]);
        assert_eq!(grad[0], 7.0);
    }

    #[test]
    fn branching_on_values() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let y = tape.var(5.0);
        let max = if x > y { x } else { y };
        let grad = tape.gradient(max * max, &[x, y]);
        assert_eq!(grad, vec![0.0, 10.0]);
    }
}
