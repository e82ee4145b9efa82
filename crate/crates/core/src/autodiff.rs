//! Scalar reverse-mode differentiation on a thread-local tape.
//!
//! The flow kernel is written once against [`Real`]; instantiated with `f64`
//! it evaluates densities, instantiated with [`Var`] it records a Wengert
//! list that [`Recording::gradient`] sweeps backwards. Only the handful of
//! operations the kernel needs are supported.

use std::cell::{Cell, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};

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
    fn constant(c: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    /// `ln |x|`
    fn ln_abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
}

impl Real for f64 {
    #[inline]
    fn constant(c: f64) -> Self {
        c
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln_abs(self) -> Self {
        self.abs().ln()
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
}

const CONST: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    a: u32,
    b: u32,
    da: f64,
    db: f64,
}

thread_local! {
    static TAPE: RefCell<Vec<Node>> = const { RefCell::new(Vec::new()) };
    static ADJOINT: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
    static ACTIVE: Cell<bool> = const { Cell::new(false) };
}

/// A value recorded on the current thread's tape.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    val: f64,
    idx: u32,
}

impl Var {
    #[inline]
    fn record(val: f64, a: u32, da: f64, b: u32, db: f64) -> Var {
        if a == CONST && b == CONST {
            return Var { val, idx: CONST };
        }
        let idx = TAPE.with(|t| {
            let mut t = t.borrow_mut();
            t.push(Node { a, b, da, db });
            (t.len() - 1) as u32
        });
        Var { val, idx }
    }

    #[inline]
    fn unary(self, val: f64, d: f64) -> Var {
        Var::record(val, self.idx, d, CONST, 0.0)
    }
}

impl Add for Var {
    type Output = Var;
    #[inline]
    fn add(self, o: Var) -> Var {
        Var::record(self.val + o.val, self.idx, 1.0, o.idx, 1.0)
    }
}

impl Sub for Var {
    type Output = Var;
    #[inline]
    fn sub(self, o: Var) -> Var {
        Var::record(self.val - o.val, self.idx, 1.0, o.idx, -1.0)
    }
}

impl Mul for Var {
    type Output = Var;
    #[inline]
    fn mul(self, o: Var) -> Var {
        Var::record(self.val * o.val, self.idx, o.val, o.idx, self.val)
    }
}

impl Div for Var {
    type Output = Var;
    #[inline]
    fn div(self, o: Var) -> Var {
        let inv = 1.0 / o.val;
        let q = self.val * inv;
        Var::record(q, self.idx, inv, o.idx, -q * inv)
    }
}

impl Neg for Var {
    type Output = Var;
    #[inline]
    fn neg(self) -> Var {
        self.unary(-self.val, -1.0)
    }
}

impl Add<f64> for Var {
    type Output = Var;
    #[inline]
    fn add(self, c: f64) -> Var {
        self.unary(self.val + c, 1.0)
    }
}

impl Sub<f64> for Var {
    type Output = Var;
    #[inline]
    fn sub(self, c: f64) -> Var {
        self.unary(self.val - c, 1.0)
    }
}

impl Mul<f64> for Var {
    type Output = Var;
    #[inline]
    fn mul(self, c: f64) -> Var {
        self.unary(self.val * c, c)
    }
}

impl Div<f64> for Var {
    type Output = Var;
    #[inline]
    fn div(self, c: f64) -> Var {
        self.unary(self.val / c, 1.0 / c)
    }
}

impl Real for Var {
    #[inline]
    fn constant(c: f64) -> Self {
        Var { val: c, idx: CONST }
    }
    #[inline]
    fn value(self) -> f64 {
        self.val
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
    #[inline]
    fn ln_abs(self) -> Self {
        self.unary(self.val.abs().ln(), 1.0 / self.val)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }
    #[inline]
    fn sin(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.unary(s, c)
    }
    #[inline]
    fn cos(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.unary(c, -s)
    }
}

/// Exclusive handle on this thread's tape for the duration of [`record`].
pub struct Recording {
    _private: (),
}

impl Recording {
    /// A differentiable input.
    pub fn input(&mut self, val: f64) -> Var {
        let idx = TAPE.with(|t| {
            let mut t = t.borrow_mut();
            t.push(Node {
                a: CONST,
                b: CONST,
                da: 0.0,
                db: 0.0,
            });
            (t.len() - 1) as u32
        });
        Var { val, idx }
    }

    /// Adjoint of `out` with respect to each of `inputs`.
    pub fn gradient(&mut self, out: Var, inputs: &[Var], grads: &mut [f64]) {
        assert_eq!(inputs.len(), grads.len());
        if out.idx == CONST {
            grads.fill(0.0);
            return;
        }
        TAPE.with(|t| {
            let t = t.borrow();
            ADJOINT.with(|adj| {
                let mut adj = adj.borrow_mut();
                adj.clear();
                adj.resize(out.idx as usize + 1, 0.0);
                adj[out.idx as usize] = 1.0;
                for i in (0..=out.idx as usize).rev() {
                    let g = adj[i];
                    if g == 0.0 {
                        continue;
                    }
                    let n = t[i];
                    if n.a != CONST {
                        adj[n.a as usize] += g * n.da;
                    }
                    if n.b != CONST {
                        adj[n.b as usize] += g * n.db;
                    }
                }
                for (g, v) in grads.iter_mut().zip(inputs) {
                    *g = if v.idx == CONST || v.idx > out.idx {
                        0.0
                    } else {
                        adj[v.idx as usize]
                    };
                }
            });
        });
    }

    /// Discards everything recorded so far; previously issued vars become invalid.
    pub fn reset(&mut self) {
        TAPE.with(|t| t.borrow_mut().clear());
    }

    pub fn len(&self) -> usize {
        TAPE.with(|t| t.borrow().len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Runs `f` with a fresh tape on the current thread. Not reentrant.
pub fn record<R>(f: impl FnOnce(&mut Recording) -> R) -> R {
    struct Guard;
    impl Drop for Guard {
        fn drop(&mut self) {
            TAPE.with(|t| t.borrow_mut().clear());
            ACTIVE.with(|a| a.set(false));
        }
    }
    let was_active = ACTIVE.with(|a| a.replace(true));
    assert!(!was_active, "autodiff::record is not reentrant");
    let _guard = Guard;
    TAPE.with(|t| t.borrow_mut().clear());
    f(&mut Recording { _private: () })
}
