use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::poly::Poly;
use super::SymbolicError;

/// Quotient of two polynomials, kept in a light normal form: a monomial
/// denominator is folded into the numerator, exact quotients are taken, and
/// otherwise the denominator is scaled to a unit leading coefficient.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationalExpr {
    pub num: Poly,
    pub den: Poly,
}

impl RationalExpr {
    pub fn new(num: Poly, den: Poly) -> Result<Self, SymbolicError> {
        if den.is_zero() {
            return Err(SymbolicError::ZeroDenominator);
        }
        Ok(RationalExpr { num, den }.normalized())
    }

    pub fn from_poly(p: Poly) -> Self {
        RationalExpr {
            num: p,
            den: Poly::one(),
        }
    }

    pub fn parse(num: &str, den: &str) -> Result<Self, SymbolicError> {
        RationalExpr::new(Poly::parse(num)?, Poly::parse(den)?)
    }

    fn normalized(self) -> Self {
        let RationalExpr { num, den } = self;
        if num.is_zero() {
            return RationalExpr::from_poly(Poly::zero());
        }
        if let Some(q) = num.div_exact(&den) {
            return RationalExpr::from_poly(q);
        }
        // Divide top and bottom by the denominator's leading term so that the
        // representation does not depend on how the quotient was formed.
        let (m, c) = den
            .terms()
            .next_back()
            .map(|(m, c)| (m.clone(), c.clone()))
            .expect("non-zero denominator");
        let inv = m.inverse();
        let k = c.recip();
        RationalExpr {
            num: num.mul_monomial(&inv).scale(&k),
            den: den.mul_monomial(&inv).scale(&k),
        }
    }

    pub fn is_polynomial(&self) -> bool {
        self.den == Poly::one()
    }

    pub fn mul(&self, rhs: &RationalExpr) -> RationalExpr {
        // Cancel cross factors first so that common symbolic factors vanish.
        let (a, d) = cancel(&self.num, &rhs.den);
        let (c, b) = cancel(&rhs.num, &self.den);
        RationalExpr {
            num: &a * &c,
            den: &b * &d,
        }
        .normalized()
    }

    pub fn recip(&self) -> Result<RationalExpr, SymbolicError> {
        RationalExpr::new(self.den.clone(), self.num.clone())
    }

    pub fn div(&self, rhs: &RationalExpr) -> Result<RationalExpr, SymbolicError> {
        Ok(self.mul(&rhs.recip()?))
    }

    pub fn add(&self, rhs: &RationalExpr) -> RationalExpr {
        if self.den == rhs.den {
            return RationalExpr {
                num: &self.num + &rhs.num,
                den: self.den.clone(),
            }
            .normalized();
        }
        RationalExpr {
            num: &(&self.num * &rhs.den) + &(&rhs.num * &self.den),
            den: &self.den * &rhs.den,
        }
        .normalized()
    }

    pub fn neg(&self) -> RationalExpr {
        RationalExpr {
            num: -&self.num,
            den: self.den.clone(),
        }
    }

    /// Polynomial identity of the cross products.
    pub fn equivalent(&self, other: &RationalExpr) -> bool {
        &self.num * &other.den == &other.num * &self.den
    }

    pub fn try_eval(&self, env: &BTreeMap<String, f64>) -> Result<f64, SymbolicError> {
        Ok(self.num.try_eval(env)? / self.den.try_eval(env)?)
    }

    pub fn eval(&self, env: &BTreeMap<String, f64>) -> f64 {
        self.num.eval(env) / self.den.eval(env)
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut v = self.num.variables();
        v.extend(self.den.variables());
        v
    }
}

fn cancel(a: &Poly, b: &Poly) -> (Poly, Poly) {
    if b.len() > 1 {
        if let Some(q) = a.div_exact(b) {
            return (q, Poly::one());
        }
    }
    (a.clone(), b.clone())
}

fn wrap(p: &Poly) -> String {
    if p.len() > 1 {
        format!("({p})")
    } else {
        p.to_string()
    }
}

impl fmt::Display for RationalExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_polynomial() {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", wrap(&self.num), wrap(&self.den))
        }
    }
}

impl fmt::Debug for RationalExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RationalExpr({self})")
    }
}
