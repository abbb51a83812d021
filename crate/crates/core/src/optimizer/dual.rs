use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::metrics::Scalar;

/// Forward-mode dual number carrying a full gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub g: Vec<f64>,
}

impl Dual {
    pub fn constant_n(v: f64, n: usize) -> Dual {
        Dual { v, g: vec![0.0; n] }
    }

    /// Value `v` with derivative `d` along coordinate `i` of `n`.
    pub fn var(v: f64, d: f64, i: usize, n: usize) -> Dual {
        let mut g = vec![0.0; n];
        g[i] = d;
        Dual { v, g }
    }

    /// Apply `f` with derivative `df` at the current value.
    fn chain(mut self, v: f64, df: f64) -> Dual {
        self.v = v;
        self.g.iter_mut().for_each(|x| *x *= df);
        self
    }

    fn zip(mut self, o: &Dual, f: impl Fn(f64, f64) -> f64) -> Dual {
        if self.g.is_empty() {
            self.g = vec![0.0; o.g.len()];
        }
        for (i, x) in self.g.iter_mut().enumerate() {
            *x = f(*x, o.g.get(i).copied().unwrap_or(0.0));
        }
        self
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        let v = self.v + o.v;
        let mut r = self.zip(&o, |a, b| a + b);
        r.v = v;
        r
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        let v = self.v - o.v;
        let mut r = self.zip(&o, |a, b| a - b);
        r.v = v;
        r
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        let (a, b) = (self.v, o.v);
        let mut r = self.zip(&o, |da, db| da * b + a * db);
        r.v = a * b;
        r
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let (a, b) = (self.v, o.v);
        let mut r = self.zip(&o, |da, db| (da * b - a * db) / (b * b));
        r.v = a / b;
        r
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        let v = -self.v;
        self.chain(v, -1.0)
    }
}

impl Scalar for Dual {
    fn constant(v: f64) -> Self {
        Dual { v, g: Vec::new() }
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn ln(&self) -> Self {
        self.clone().chain(self.v.ln(), 1.0 / self.v)
    }
    fn sqrt(&self) -> Self {
        let r = self.v.sqrt();
        self.clone().chain(r, 0.5 / r)
    }
    fn atan(&self) -> Self {
        self.clone().chain(self.v.atan(), 1.0 / (1.0 + self.v * self.v))
    }
    fn atan2(&self, x: &Self) -> Self {
        let (y0, x0) = (self.v, x.v);
        let r2 = x0 * x0 + y0 * y0;
        let mut r = self.clone().zip(x, |dy, dx| (x0 * dy - y0 * dx) / r2);
        r.v = y0.atan2(x0);
        r
    }
    fn powi(&self, n: i32) -> Self {
        let v = self.v.powi(n);
        self.clone().chain(v, n as f64 * self.v.powi(n - 1))
    }
    fn scale(&self, k: f64) -> Self {
        self.clone().chain(self.v * k, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_quotient_rules() {
        let x = Dual::var(3.0, 1.0, 0, 2);
        let y = Dual::var(2.0, 1.0, 1, 2);
        let f = x.clone() * y.clone() / (x.clone() + Dual::constant(1.0));
        // f = xy/(x+1): df/dx = y/(x+1)^2, df/dy = x/(x+1)
        assert!((f.v - 1.5).abs() < 1e-15);
        assert!((f.g[0] - 2.0 / 16.0).abs() < 1e-15);
        assert!((f.g[1] - 0.75).abs() < 1e-15);
        let a = y.atan2(&x);
        assert!((a.g[0] + 2.0 / 13.0).abs() < 1e-15 && (a.g[1] - 3.0 / 13.0).abs() < 1e-15);
        let p = x.powi(-2);
        assert!((p.g[0] + 2.0 / 27.0).abs() < 1e-15);
    }
}
