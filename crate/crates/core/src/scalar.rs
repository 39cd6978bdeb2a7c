//! Scalar abstraction used by every closed-form evaluation.
//!
//! `f64` is the plain case. [`HyperDual`] carries up to four independent
//! infinitesimal directions with nilpotent products, so evaluating a formula
//! over it yields exact mixed directional derivatives up to fourth order.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn re(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    /// Power with a constant real exponent.
    fn powf(self, p: f64) -> Self;

    /// `x log x` with the continuous value 0 at `x = 0`.
    fn xlnx(self) -> Self {
        if self.re() == 0.0 {
            Self::cst(0.0)
        } else {
            self * self.ln()
        }
    }

    fn square(self) -> Self {
        self * self
    }
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn re(&self) -> f64 {
        *self
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
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn powf(self, p: f64) -> Self {
        if p.fract() == 0.0 && p.abs() < 1e9 {
            f64::powi(self, p as i32)
        } else {
            f64::powf(self, p)
        }
    }
}

/// Truncated multivariate Taylor number with `dirs ≤ 4` nilpotent directions
/// `ε_a` (ε_a² = 0). Component `c[S]` is the coefficient of `Π_{a∈S} ε_a` for
/// the bit set `S`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperDual {
    dirs: u8,
    c: [f64; 16],
}

pub const MAX_DIRS: usize = 4;

impl HyperDual {
    pub fn constant(v: f64) -> Self {
        let mut c = [0.0; 16];
        c[0] = v;
        HyperDual { dirs: 0, c }
    }

    /// A variable with value `v` and seeds `seed[a]` along direction `a`.
    pub fn variable(v: f64, seed: &[f64]) -> Self {
        assert!(seed.len() <= MAX_DIRS);
        let mut c = [0.0; 16];
        c[0] = v;
        for (a, s) in seed.iter().enumerate() {
            c[1 << a] = *s;
        }
        HyperDual { dirs: seed.len() as u8, c }
    }

    pub fn dirs(&self) -> usize {
        self.dirs as usize
    }

    /// Coefficient of the monomial with bit set `mask`.
    pub fn part(&self, mask: usize) -> f64 {
        self.c[mask]
    }

    fn width(a: &Self, b: &Self) -> u8 {
        a.dirs.max(b.dirs)
    }

    /// Composition `g(self)` given `g^{(k)}(re)` for `k = 0..=dirs`.
    fn compose(self, derivs: &[f64]) -> Self {
        let mut out = HyperDual::constant(derivs[0]);
        out.dirs = self.dirs;
        let mut delta = self;
        delta.c[0] = 0.0;
        let mut power = delta;
        let mut fact = 1.0;
        for (k, dk) in derivs.iter().enumerate().skip(1) {
            if k > 1 {
                power = power * delta;
            }
            fact *= k as f64;
            let w = dk / fact;
            let size = 1usize << self.dirs;
            for s in 1..size {
                out.c[s] += w * power.c[s];
            }
        }
        out
    }
}

impl Add for HyperDual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let dirs = Self::width(&self, &o);
        let mut c = [0.0; 16];
        for (s, v) in c.iter_mut().enumerate().take(1 << dirs) {
            *v = self.c[s] + o.c[s];
        }
        HyperDual { dirs, c }
    }
}

impl Sub for HyperDual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let dirs = Self::width(&self, &o);
        let mut c = [0.0; 16];
        for (s, v) in c.iter_mut().enumerate().take(1 << dirs) {
            *v = self.c[s] - o.c[s];
        }
        HyperDual { dirs, c }
    }
}

impl Neg for HyperDual {
    type Output = Self;
    fn neg(self) -> Self {
        let mut c = self.c;
        for v in c.iter_mut() {
            *v = -*v;
        }
        HyperDual { dirs: self.dirs, c }
    }
}

impl Mul for HyperDual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let dirs = Self::width(&self, &o);
        let mut c = [0.0; 16];
        for s in 0..(1usize << dirs) {
            // sum over subsets t of s
            let mut t = s;
            let mut acc = 0.0;
            loop {
                acc += self.c[t] * o.c[s ^ t];
                if t == 0 {
                    break;
                }
                t = (t - 1) & s;
            }
            c[s] = acc;
        }
        HyperDual { dirs, c }
    }
}

impl Div for HyperDual {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        if o.dirs == 0 {
            let mut c = self.c;
            for v in c.iter_mut() {
                *v /= o.c[0];
            }
            return HyperDual { dirs: self.dirs, c };
        }
        self * o.powf(-1.0)
    }
}

impl Scalar for HyperDual {
    fn cst(v: f64) -> Self {
        HyperDual::constant(v)
    }
    fn re(&self) -> f64 {
        self.c[0]
    }
    fn exp(self) -> Self {
        let e = self.c[0].exp();
        let d = vec![e; self.dirs as usize + 1];
        self.compose(&d)
    }
    fn ln(self) -> Self {
        let a = self.c[0];
        let mut d = vec![a.ln()];
        let mut f = 1.0;
        for k in 1..=self.dirs as usize {
            if k > 1 {
                f *= -((k - 1) as f64);
            }
            d.push(f / a.powi(k as i32));
        }
        self.compose(&d)
    }
    fn sqrt(self) -> Self {
        self.powf(0.5)
    }
    fn sin(self) -> Self {
        let a = self.c[0];
        let cyc = [a.sin(), a.cos(), -a.sin(), -a.cos()];
        let d: Vec<f64> = (0..=self.dirs as usize).map(|k| cyc[k % 4]).collect();
        self.compose(&d)
    }
    fn cos(self) -> Self {
        let a = self.c[0];
        let cyc = [a.cos(), -a.sin(), -a.cos(), a.sin()];
        let d: Vec<f64> = (0..=self.dirs as usize).map(|k| cyc[k % 4]).collect();
        self.compose(&d)
    }
    fn powf(self, p: f64) -> Self {
        let a = self.c[0];
        let mut d = Vec::with_capacity(self.dirs as usize + 1);
        let mut coef = 1.0;
        for k in 0..=self.dirs as usize {
            let e = p - k as f64;
            d.push(if coef == 0.0 { 0.0 } else { coef * <f64 as Scalar>::powf(a, e) });
            coef *= e;
        }
        self.compose(&d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f<T: Scalar>(x: T, y: T) -> T {
        (x * y).exp() + x.powf(3.0) * y.ln() - (x / y).sin()
    }

    #[test]
    fn mixed_second_derivative_matches_closed_form() {
        let (x0, y0) = (0.7, 1.3);
        let x = HyperDual::variable(x0, &[1.0, 0.0]);
        let y = HyperDual::variable(y0, &[0.0, 1.0]);
        let r = f(x, y);
        // d/dx
        let fx = y0 * (x0 * y0).exp() + 3.0 * x0 * x0 * y0.ln() - (x0 / y0).cos() / y0;
        assert!((r.part(1) - fx).abs() < 1e-12);
        let h = 1e-5;
        let fd = (f(x0 + h, y0 + h) - f(x0 + h, y0 - h) - f(x0 - h, y0 + h) + f(x0 - h, y0 - h))
            / (4.0 * h * h);
        assert!((r.part(3) - fd).abs() < 1e-5);
    }

    #[test]
    fn fourth_derivative_of_exp_along_one_direction() {
        let x = HyperDual::variable(0.3, &[1.0, 1.0, 1.0, 1.0]);
        let r = x.exp();
        assert!((r.part(15) - 0.3f64.exp()).abs() < 1e-14);
        let r = x.ln();
        // d^4 ln x = -6 / x^4
        assert!((r.part(15) + 6.0 / 0.3f64.powi(4)).abs() < 1e-9);
    }

    #[test]
    fn division_and_sqrt() {
        let x = HyperDual::variable(2.0, &[1.0, 1.0]);
        let r = HyperDual::constant(1.0) / x;
        assert!((r.part(1) + 0.25).abs() < 1e-15);
        assert!((r.part(3) - 0.25).abs() < 1e-15);
        let s = x.sqrt();
        assert!((s.part(3) + 0.25 * 2f64.powf(-1.5)).abs() < 1e-15);
    }
}
