use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::symbolic::{rational_to_f64, Poly, RationalExpr};

/// Arithmetic needed to evaluate a [`Formula`]; implemented for `f64` and
/// for forward-mode dual numbers in the optimizer.
pub trait Scalar:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(&self) -> f64;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn atan(&self) -> Self;
    fn atan2(&self, x: &Self) -> Self;
    fn powi(&self, n: i32) -> Self;
    fn scale(&self, k: f64) -> Self;
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn atan(&self) -> Self {
        f64::atan(*self)
    }
    fn atan2(&self, x: &Self) -> Self {
        f64::atan2(*self, *x)
    }
    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }
    fn scale(&self, k: f64) -> Self {
        self * k
    }
}

/// Closed-form expression over design variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op", content = "args")]
pub enum Formula {
    Const(f64),
    Rat(RationalExpr),
    Sum(Vec<Formula>),
    Mul(Box<Formula>, Box<Formula>),
    Div(Box<Formula>, Box<Formula>),
    Scale(f64, Box<Formula>),
    Neg(Box<Formula>),
    Sqrt(Box<Formula>),
    Log10(Box<Formula>),
    /// `atan(x)` in degrees.
    AtanDeg(Box<Formula>),
    /// Phase in degrees of `1/(1 + 2 zeta s/wn + (s/wn)^2)` negated, at
    /// `s = j w`: `atan2(2 zeta w/wn, 1 - (w/wn)^2)`.
    PairPhaseDeg {
        w: Box<Formula>,
        wn_sq: Box<Formula>,
        zeta_sq: Box<Formula>,
    },
}

impl Formula {
    pub fn rat(r: RationalExpr) -> Formula {
        Formula::Rat(r)
    }

    pub fn poly(p: Poly) -> Formula {
        Formula::Rat(RationalExpr::from_poly(p))
    }

    pub fn boxed(self) -> Box<Formula> {
        Box::new(self)
    }

    /// Symbols referenced anywhere in the expression.
    pub fn variables(&self) -> Vec<String> {
        let mut out = std::collections::BTreeSet::new();
        self.visit(&mut |r| out.extend(r.variables()));
        out.into_iter().collect()
    }

    fn visit(&self, f: &mut impl FnMut(&RationalExpr)) {
        match self {
            Formula::Const(_) => {}
            Formula::Rat(r) => f(r),
            Formula::Sum(xs) => xs.iter().for_each(|x| x.visit(f)),
            Formula::Mul(a, b) | Formula::Div(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Formula::Scale(_, a) | Formula::Neg(a) | Formula::Sqrt(a) | Formula::Log10(a) | Formula::AtanDeg(a) => {
                a.visit(f)
            }
            Formula::PairPhaseDeg { w, wn_sq, zeta_sq } => {
                w.visit(f);
                wn_sq.visit(f);
                zeta_sq.visit(f);
            }
        }
    }

    pub fn try_eval(&self, env: &BTreeMap<String, f64>) -> Option<f64> {
        let symbols = self.variables();
        let values: Option<Vec<f64>> = symbols.iter().map(|s| env.get(s).copied()).collect();
        let c = self.compile(&|s| symbols.iter().position(|x| x == s));
        Some(c.eval(&values?))
    }

    /// Evaluate; panics on an unbound symbol.
    pub fn eval(&self, env: &BTreeMap<String, f64>) -> f64 {
        self.try_eval(env)
            .unwrap_or_else(|| panic!("unbound symbol in {self}"))
    }

    /// Resolve symbols to slot indices for repeated evaluation.
    ///
    /// Panics when `slot` does not know a symbol.
    pub fn compile(&self, slot: &dyn Fn(&str) -> Option<usize>) -> Compiled {
        let poly = |p: &Poly| CompiledPoly {
            terms: p
                .terms()
                .map(|(m, c)| {
                    let factors = m
                        .exponents()
                        .iter()
                        .map(|(v, e)| (slot(v).unwrap_or_else(|| panic!("unknown symbol {v}")), *e))
                        .collect();
                    (rational_to_f64(c), factors)
                })
                .collect(),
        };
        let b = |f: &Formula| Box::new(f.compile(slot));
        match self {
            Formula::Const(v) => Compiled::Const(*v),
            Formula::Rat(r) => {
                if let Some(d) = r.den.as_constant() {
                    Compiled::Scale(1.0 / rational_to_f64(&d), Box::new(Compiled::Poly(poly(&r.num))))
                } else {
                    Compiled::Ratio(poly(&r.num), poly(&r.den))
                }
            }
            Formula::Sum(xs) => Compiled::Sum(xs.iter().map(|x| x.compile(slot)).collect()),
            Formula::Mul(a, c) => Compiled::Mul(b(a), b(c)),
            Formula::Div(a, c) => Compiled::Div(b(a), b(c)),
            Formula::Scale(k, a) => Compiled::Scale(*k, b(a)),
            Formula::Neg(a) => Compiled::Scale(-1.0, b(a)),
            Formula::Sqrt(a) => Compiled::Sqrt(b(a)),
            Formula::Log10(a) => Compiled::Log10(b(a)),
            Formula::AtanDeg(a) => Compiled::AtanDeg(b(a)),
            Formula::PairPhaseDeg { w, wn_sq, zeta_sq } => Compiled::PairPhaseDeg(b(w), b(wn_sq), b(zeta_sq)),
        }
    }
}

fn paren(f: &Formula) -> String {
    match f {
        Formula::Sum(_) | Formula::Neg(_) => format!("({f})"),
        Formula::Rat(r) if r.to_string().contains(' ') || r.den.as_constant().is_none() => format!("({f})"),
        _ => f.to_string(),
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Const(v) => write!(f, "{v}"),
            Formula::Rat(r) => write!(f, "{r}"),
            Formula::Sum(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    match (i, x) {
                        (0, _) => write!(f, "{x}")?,
                        (_, Formula::Neg(inner)) => write!(f, " - {inner}")?,
                        _ => write!(f, " + {x}")?,
                    }
                }
                Ok(())
            }
            Formula::Mul(a, b) => write!(f, "{}*{}", paren(a), paren(b)),
            Formula::Div(a, b) => write!(f, "{}/{}", paren(a), paren(b)),
            Formula::Scale(k, a) => write!(f, "{k}*{}", paren(a)),
            Formula::Neg(a) => write!(f, "-{}", paren(a)),
            Formula::Sqrt(a) => write!(f, "sqrt({a})"),
            Formula::Log10(a) => write!(f, "log10({a})"),
            Formula::AtanDeg(a) => write!(f, "(180/pi)*atan({a})"),
            Formula::PairPhaseDeg { w, wn_sq, zeta_sq } => write!(
                f,
                "(180/pi)*atan2(2*sqrt({zeta_sq})*{}/sqrt({wn_sq}), 1 - {}^2/({wn_sq}))",
                paren(w),
                paren(w)
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledPoly {
    terms: Vec<(f64, Vec<(usize, i32)>)>,
}

impl CompiledPoly {
    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        let mut acc = S::constant(0.0);
        for (c, factors) in &self.terms {
            let mut t = S::constant(*c);
            for &(i, e) in factors {
                t = t * x[i].powi(e);
            }
            acc = acc + t;
        }
        acc
    }
}

/// A [`Formula`] with symbols resolved to slots.
#[derive(Debug, Clone, PartialEq)]
pub enum Compiled {
    Const(f64),
    Poly(CompiledPoly),
    Ratio(CompiledPoly, CompiledPoly),
    Sum(Vec<Compiled>),
    Mul(Box<Compiled>, Box<Compiled>),
    Div(Box<Compiled>, Box<Compiled>),
    Scale(f64, Box<Compiled>),
    Sqrt(Box<Compiled>),
    Log10(Box<Compiled>),
    AtanDeg(Box<Compiled>),
    PairPhaseDeg(Box<Compiled>, Box<Compiled>, Box<Compiled>),
}

const DEG: f64 = 180.0 / std::f64::consts::PI;

impl Compiled {
    pub fn eval<S: Scalar>(&self, x: &[S]) -> S {
        match self {
            Compiled::Const(v) => S::constant(*v),
            Compiled::Poly(p) => p.eval(x),
            Compiled::Ratio(n, d) => n.eval(x) / d.eval(x),
            Compiled::Sum(xs) => xs.iter().fold(S::constant(0.0), |acc, c| acc + c.eval(x)),
            Compiled::Mul(a, b) => a.eval(x) * b.eval(x),
            Compiled::Div(a, b) => a.eval(x) / b.eval(x),
            Compiled::Scale(k, a) => a.eval(x).scale(*k),
            Compiled::Sqrt(a) => a.eval(x).sqrt(),
            Compiled::Log10(a) => a.eval(x).ln().scale(1.0 / std::f64::consts::LN_10),
            Compiled::AtanDeg(a) => a.eval(x).atan().scale(DEG),
            Compiled::PairPhaseDeg(w, wn_sq, zeta_sq) => {
                let w = w.eval(x);
                let wn_sq = wn_sq.eval(x);
                let r = w.clone() / wn_sq.clone().sqrt();
                let y = zeta_sq.eval(x).sqrt().scale(2.0) * r.clone();
                let xx = S::constant(1.0) - w.clone() * w / wn_sq;
                y.atan2(&xx).scale(DEG)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn evaluates_mixed_tree() {
        let g = Formula::rat(RationalExpr::parse("G1", "Cm").unwrap());
        let f = Formula::Sum(vec![
            Formula::Const(90.0),
            Formula::Neg(Formula::AtanDeg(Formula::Div(g.clone().boxed(), Formula::poly(Poly::parse("P").unwrap()).boxed()).boxed()).boxed()),
        ]);
        let e = env(&[("G1", 1.0), ("Cm", 1.0), ("P", 1.0)]);
        assert!((f.eval(&e) - 45.0).abs() < 1e-12);
        assert_eq!(f.variables(), ["Cm", "G1", "P"]);
        assert!(f.try_eval(&env(&[("G1", 1.0)])).is_none());
    }

    #[test]
    fn pair_phase_is_ninety_at_natural_frequency() {
        let f = Formula::PairPhaseDeg {
            w: Formula::Const(3.0).boxed(),
            wn_sq: Formula::Const(9.0).boxed(),
            zeta_sq: Formula::Const(0.25).boxed(),
        };
        assert!((f.eval(&BTreeMap::new()) - 90.0).abs() < 1e-12);
        let below = Formula::PairPhaseDeg {
            w: Formula::Const(1e-3).boxed(),
            wn_sq: Formula::Const(9.0).boxed(),
            zeta_sq: Formula::Const(0.25).boxed(),
        };
        assert!(below.eval(&BTreeMap::new()).abs() < 0.1);
    }
}
