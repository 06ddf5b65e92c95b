//! Minimal reverse-mode automatic differentiation.
//!
//! Rollouts and costs are written once against [`Scalar`] and evaluated
//! either with plain `f64` or with [`Var`], which records every operation on
//! a thread-local tape. [`gradient`] clears the tape, seeds the inputs, runs
//! the closure and sweeps the tape backwards.
//!
//! Only one [`gradient`] call may be active per thread at a time.

use std::cell::RefCell;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
{
    fn cst(v: f64) -> Self;
    fn val(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn atan(self) -> Self;
    fn sqrt(self) -> Self;
    fn acos(self) -> Self;
    fn atan2(self, x: Self) -> Self;

    fn sq(self) -> Self {
        self * self
    }

    /// `max(self, 0)`; the derivative is taken as zero at the kink.
    fn relu(self) -> Self {
        if self.val() > 0.0 {
            self
        } else {
            Self::cst(0.0)
        }
    }

    /// `max(self, lo)` with the bound treated as a constant.
    fn max_c(self, lo: f64) -> Self {
        if self.val() >= lo {
            self
        } else {
            Self::cst(lo)
        }
    }

    fn clamp_c(self, lo: f64, hi: f64) -> Self {
        if self.val() < lo {
            Self::cst(lo)
        } else if self.val() > hi {
            Self::cst(hi)
        } else {
            self
        }
    }
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn val(&self) -> f64 {
        *self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tan(self) -> Self {
        f64::tan(self)
    }
    fn atan(self) -> Self {
        f64::atan(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn acos(self) -> Self {
        f64::acos(self)
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    a: u32,
    da: f64,
    b: u32,
    db: f64,
}

thread_local! {
    static TAPE: RefCell<Vec<Node>> = RefCell::new(Vec::with_capacity(1 << 16));
}

fn push(a: u32, da: f64, b: u32, db: f64) -> u32 {
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        t.push(Node { a, da, b, db });
        (t.len() - 1) as u32
    })
}

/// A value tracked on the tape. Constants carry no tape index.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    idx: u32,
    v: f64,
}

impl Var {
    fn unary(self, v: f64, d: f64) -> Var {
        if self.idx == NONE {
            return Var { idx: NONE, v };
        }
        Var {
            idx: push(self.idx, d, NONE, 0.0),
            v,
        }
    }

    fn binary(self, o: Var, v: f64, da: f64, db: f64) -> Var {
        match (self.idx == NONE, o.idx == NONE) {
            (true, true) => Var { idx: NONE, v },
            (false, true) => Var {
                idx: push(self.idx, da, NONE, 0.0),
                v,
            },
            (true, false) => Var {
                idx: push(o.idx, db, NONE, 0.0),
                v,
            },
            (false, false) => Var {
                idx: push(self.idx, da, o.idx, db),
                v,
            },
        }
    }
}

impl Add for Var {
    type Output = Var;
    fn add(self, o: Var) -> Var {
        self.binary(o, self.v + o.v, 1.0, 1.0)
    }
}

impl Sub for Var {
    type Output = Var;
    fn sub(self, o: Var) -> Var {
        self.binary(o, self.v - o.v, 1.0, -1.0)
    }
}

impl Mul for Var {
    type Output = Var;
    fn mul(self, o: Var) -> Var {
        self.binary(o, self.v * o.v, o.v, self.v)
    }
}

impl Div for Var {
    type Output = Var;
    fn div(self, o: Var) -> Var {
        let inv = 1.0 / o.v;
        self.binary(o, self.v * inv, inv, -self.v * inv * inv)
    }
}

impl Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        self.unary(-self.v, -1.0)
    }
}

impl Add<f64> for Var {
    type Output = Var;
    fn add(self, o: f64) -> Var {
        self.unary(self.v + o, 1.0)
    }
}

impl Sub<f64> for Var {
    type Output = Var;
    fn sub(self, o: f64) -> Var {
        self.unary(self.v - o, 1.0)
    }
}

impl Mul<f64> for Var {
    type Output = Var;
    fn mul(self, o: f64) -> Var {
        self.unary(self.v * o, o)
    }
}

impl Div<f64> for Var {
    type Output = Var;
    fn div(self, o: f64) -> Var {
        self.unary(self.v / o, 1.0 / o)
    }
}

impl AddAssign for Var {
    fn add_assign(&mut self, o: Var) {
        *self = *self + o;
    }
}

impl Scalar for Var {
    fn cst(v: f64) -> Self {
        Var { idx: NONE, v }
    }
    fn val(&self) -> f64 {
        self.v
    }
    fn sin(self) -> Self {
        self.unary(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.unary(self.v.cos(), -self.v.sin())
    }
    fn tan(self) -> Self {
        let t = self.v.tan();
        self.unary(t, 1.0 + t * t)
    }
    fn atan(self) -> Self {
        self.unary(self.v.atan(), 1.0 / (1.0 + self.v * self.v))
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.unary(s, 0.5 / s)
    }
    fn acos(self) -> Self {
        // derivative capped so a clamped argument at ±1 stays finite
        let d = -1.0 / (1.0 - self.v * self.v).max(1e-12).sqrt();
        self.unary(self.v.acos(), d)
    }
    fn atan2(self, x: Self) -> Self {
        let r2 = self.v * self.v + x.v * x.v;
        self.binary(x, self.v.atan2(x.v), x.v / r2, -self.v / r2)
    }
}

/// Value and gradient of `f` at `x`.
pub fn gradient<F>(x: &[f64], f: F) -> (f64, Vec<f64>)
where
    F: FnOnce(&[Var]) -> Var,
{
    TAPE.with(|t| t.borrow_mut().clear());
    let inputs: Vec<Var> = x
        .iter()
        .map(|&v| Var {
            idx: push(NONE, 0.0, NONE, 0.0),
            v,
        })
        .collect();
    let out = f(&inputs);
    let mut grad = vec![0.0; x.len()];
    if out.idx == NONE {
        return (out.v, grad);
    }
    TAPE.with(|t| {
        let tape = t.borrow();
        let mut adj = vec![0.0; out.idx as usize + 1];
        adj[out.idx as usize] = 1.0;
        for i in (0..=out.idx as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let n = tape[i];
            if n.a != NONE {
                adj[n.a as usize] += a * n.da;
            }
            if n.b != NONE {
                adj[n.b as usize] += a * n.db;
            }
        }
        grad.copy_from_slice(&adj[..x.len()]);
    });
    (out.v, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd<F: Fn(&[f64]) -> f64>(x: &[f64], f: F) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    fn expr<T: Scalar>(x: &[T]) -> T {
        let a = x[0].sin() * x[1].cos() + x[2].atan2(x[0]) - (x[1] * x[2]).tan() / 3.0;
        let b = (x[0].sq() + x[1].sq() + 1.0).sqrt() - (x[2] * 0.3).acos() + x[1].atan();
        (a * b - x[0] / x[2]).relu() + (-x[1]).max_c(-10.0) * 2.0
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = [0.7, -0.4, 1.3];
        let (v, g) = gradient(&x, |v| expr(v));
        assert!((v - expr(&x)).abs() < 1e-14);
        let n = fd(&x, |x| expr(x));
        for (a, b) in g.iter().zip(&n) {
            assert!((a - b).abs() < 1e-7 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let (v, g) = gradient(&[1.0, 2.0], |_| Var::cst(5.0));
        assert_eq!(v, 5.0);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn repeated_use_of_an_input_accumulates() {
        let (_, g) = gradient(&[3.0], |x| x[0] * x[0] * x[0]);
        assert!((g[0] - 27.0).abs() < 1e-12);
    }
}
