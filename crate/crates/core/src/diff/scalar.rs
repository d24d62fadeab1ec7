//! Scalar reverse-mode differentiation.
//!
//! The geometric parts of the training loss (quaternion normalization, Euler
//! extraction, forward kinematics, affective features) are written once,
//! generic over [`Real`]. Evaluated with `f64` they are plain numerics;
//! evaluated with [`Var`] every arithmetic step is recorded on a [`ScalarTape`]
//! and can be swept backwards for exact gradients.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed by the geometry kernels.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    /// A constant living in the same context as `self`.
    fn lift(self, v: f64) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn atan2(self, x: Self) -> Self;

    fn square(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn lift(self, v: f64) -> Self {
        v
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
}

#[derive(Clone, Copy)]
struct Node {
    parents: [(u32, f64); 2],
    arity: u8,
}

/// Append-only record of scalar operations.
#[derive(Default)]
pub struct ScalarTape {
    nodes: RefCell<Vec<Node>>,
}

impl ScalarTape {
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

    /// Register an independent variable.
    pub fn var(&self, val: f64) -> Var<'_> {
        self.push(val, [(0, 0.0); 2], 0)
    }

    #[inline]
    fn push(&self, val: f64, parents: [(u32, f64); 2], arity: u8) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(Node { parents, arity });
        Var {
            tape: self,
            idx,
            val,
        }
    }

    /// Adjoints of every recorded node for the linear combination
    /// `sum(weight * output)` of the seeded outputs.
    pub fn adjoints(&self, seeds: &[(Var<'_>, f64)]) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        for (v, w) in seeds {
            adj[v.idx as usize] += w;
        }
        for i in (0..nodes.len()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for k in 0..node.arity as usize {
                let (p, d) = node.parents[k];
                adj[p as usize] += a * d;
            }
        }
        adj
    }
}

/// A recorded scalar.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t ScalarTape,
    idx: u32,
    val: f64,
}

impl<'t> Var<'t> {
    pub fn index(self) -> usize {
        self.idx as usize
    }

    #[inline]
    fn unary(self, val: f64, d: f64) -> Self {
        self.tape.push(val, [(self.idx, d), (0, 0.0)], 1)
    }

    #[inline]
    fn binary(self, other: Self, val: f64, da: f64, db: f64) -> Self {
        self.tape.push(val, [(self.idx, da), (other.idx, db)], 2)
    }
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({})", self.idx, self.val)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        self.binary(o, self.val + o.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        self.binary(o, self.val - o.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        self.binary(o, self.val * o.val, o.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.val / o.val;
        self.binary(o, q, 1.0 / o.val, -q / o.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn add(self, c: f64) -> Self {
        self.unary(self.val + c, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn sub(self, c: f64) -> Self {
        self.unary(self.val - c, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn mul(self, c: f64) -> Self {
        self.unary(self.val * c, c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn div(self, c: f64) -> Self {
        self.unary(self.val / c, 1.0 / c)
    }
}

impl<'t> Real for Var<'t> {
    #[inline]
    fn value(self) -> f64 {
        self.val
    }

    #[inline]
    fn lift(self, v: f64) -> Self {
        self.tape.var(v)
    }

    #[inline]
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        // sqrt(0) has an infinite slope; treat it as a flat point.
        let d = if s > 0.0 { 0.5 / s } else { 0.0 };
        self.unary(s, d)
    }

    #[inline]
    fn sin(self) -> Self {
        self.unary(self.val.sin(), self.val.cos())
    }

    #[inline]
    fn cos(self) -> Self {
        self.unary(self.val.cos(), -self.val.sin())
    }

    #[inline]
    fn atan2(self, x: Self) -> Self {
        let (y, xv) = (self.val, x.val);
        let r2 = y * y + xv * xv;
        let (dy, dx) = if r2 > 0.0 { (xv / r2, -y / r2) } else { (0.0, 0.0) };
        self.binary(x, y.atan2(xv), dy, dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
        let h = 1e-6;
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    }

    fn generic<T: Real>(x: &[T]) -> T {
        let r = (x[0] * x[1] + x[2].sin()).square() / (x[1].cos() + 3.0);
        r + x[0].atan2(x[2]) - (x[1] * x[1] + 1.0).sqrt() * 2.0
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = [0.3, -1.2, 0.7];
        let tape = ScalarTape::new();
        let vars: Vec<_> = x.iter().map(|&v| tape.var(v)).collect();
        let out = generic(&vars);
        assert!((out.value() - generic(&x)).abs() < 1e-15);
        let adj = tape.adjoints(&[(out, 1.0)]);
        for (i, v) in vars.iter().enumerate() {
            let num = fd(generic::<f64>, &x, i);
            assert!((adj[v.index()] - num).abs() < 1e-8, "{i}: {} vs {num}", adj[v.index()]);
        }
    }

    #[test]
    fn unused_input_has_zero_adjoint() {
        let tape = ScalarTape::new();
        let a = tape.var(2.0);
        let b = tape.var(5.0);
        let out = a * a;
        let adj = tape.adjoints(&[(out, 1.0)]);
        assert_eq!(adj[a.index()], 4.0);
        assert_eq!(adj[b.index()], 0.0);
    }

    #[test]
    fn sqrt_at_zero_is_flat() {
        let tape = ScalarTape::new();
        let a = tape.var(0.0);
        let out = a.sqrt();
        let adj = tape.adjoints(&[(out, 1.0)]);
        assert_eq!(adj[a.index()], 0.0);
    }
}
