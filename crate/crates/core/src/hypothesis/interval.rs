use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::symbolic::{rational_to_f64, Monomial, Poly, RationalExpr, Rational};

/// Closed real interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// Sign information carried by an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
    Zero,
    Mixed,
}

impl Sign {
    pub fn definite(self) -> Option<f64> {
        match self {
            Sign::Positive => Some(1.0),
            Sign::Negative => Some(-1.0),
            _ => None,
        }
    }

    pub fn mul(self, other: Sign) -> Sign {
        match (self, other) {
            (Sign::Zero, _) | (_, Sign::Zero) => Sign::Zero,
            (Sign::Mixed, _) | (_, Sign::Mixed) => Sign::Mixed,
            (a, b) if a == b => Sign::Positive,
            _ => Sign::Negative,
        }
    }

    pub fn neg(self) -> Sign {
        match self {
            Sign::Positive => Sign::Negative,
            Sign::Negative => Sign::Positive,
            s => s,
        }
    }
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn entire() -> Self {
        Interval {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn sign(&self) -> Sign {
        if self.lo > 0.0 {
            Sign::Positive
        } else if self.hi < 0.0 {
            Sign::Negative
        } else if self.lo == 0.0 && self.hi == 0.0 {
            Sign::Zero
        } else {
            Sign::Mixed
        }
    }

    /// Geometric midpoint for positive intervals, arithmetic otherwise.
    pub fn midpoint(&self) -> f64 {
        if self.lo > 0.0 {
            (self.lo * self.hi).sqrt()
        } else if self.hi < 0.0 {
            -(self.lo * self.hi).sqrt()
        } else {
            0.5 * (self.lo + self.hi)
        }
    }

    pub fn magnitude_mid(&self) -> f64 {
        self.midpoint().abs()
    }

    pub fn add(&self, o: &Interval) -> Interval {
        Interval::new(self.lo + o.lo, self.hi + o.hi)
    }

    pub fn neg(&self) -> Interval {
        Interval::new(-self.hi, -self.lo)
    }

    pub fn mul(&self, o: &Interval) -> Interval {
        let c = [self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi];
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval::new(lo, hi)
    }

    /// Quotient; the whole line when the divisor contains zero.
    pub fn div(&self, o: &Interval) -> Interval {
        if o.contains(0.0) {
            return Interval::entire();
        }
        self.mul(&Interval::new(1.0 / o.hi, 1.0 / o.lo))
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.4e}, {:.4e}]", self.lo, self.hi)
    }
}

pub type Bounds = BTreeMap<String, (f64, f64)>;

/// Range of a positive-variable monomial: each variable at the end of its box
/// selected by the exponent sign.
pub fn monomial_interval(m: &Monomial, bounds: &Bounds) -> Interval {
    let (mut lo, mut hi) = (1.0_f64, 1.0_f64);
    for (k, e) in m.exponents() {
        let (l, h) = bounds.get(k).copied().unwrap_or((f64::NAN, f64::NAN));
        if *e > 0 {
            lo *= l.powi(*e);
            hi *= h.powi(*e);
        } else {
            lo *= h.powi(*e);
            hi *= l.powi(*e);
        }
    }
    Interval::new(lo, hi)
}

pub fn term_interval(m: &Monomial, c: &Rational, bounds: &Bounds) -> Interval {
    let base = monomial_interval(m, bounds);
    let k = rational_to_f64(c);
    if k >= 0.0 {
        Interval::new(base.lo * k, base.hi * k)
    } else {
        Interval::new(base.hi * k, base.lo * k)
    }
}

/// Interval sum of the term intervals.
pub fn poly_interval(p: &Poly, bounds: &Bounds) -> Interval {
    p.terms()
        .map(|(m, c)| term_interval(m, c, bounds))
        .fold(Interval::point(0.0), |acc, t| acc.add(&t))
}

pub fn rational_interval(r: &RationalExpr, bounds: &Bounds) -> Interval {
    poly_interval(&r.num, bounds).div(&poly_interval(&r.den, bounds))
}
