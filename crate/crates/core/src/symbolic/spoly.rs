use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::poly::{Monomial, Poly};
use super::SymbolicError;
use crate::netlist::LAPLACE;

/// Polynomial in `s` with symbolic coefficients: `coeffs[k]` multiplies `s^k`.
#[derive(Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SPoly {
    coeffs: Vec<Poly>,
}

impl SPoly {
    pub fn zero() -> Self {
        SPoly::default()
    }

    pub fn constant(p: Poly) -> Self {
        SPoly::from_coeffs(vec![p])
    }

    /// `p * s^k`.
    pub fn monomial(p: Poly, k: usize) -> Self {
        let mut coeffs = vec![Poly::zero(); k];
        coeffs.push(p);
        SPoly::from_coeffs(coeffs)
    }

    pub fn from_coeffs(mut coeffs: Vec<Poly>) -> Self {
        while coeffs.last().is_some_and(Poly::is_zero) {
            coeffs.pop();
        }
        SPoly { coeffs }
    }

    pub fn coeffs(&self) -> &[Poly] {
        &self.coeffs
    }

    pub fn coeff(&self, k: usize) -> Poly {
        self.coeffs.get(k).cloned().unwrap_or_default()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree in `s`; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn scale(&self, p: &Poly) -> SPoly {
        SPoly::from_coeffs(self.coeffs.iter().map(|c| c * p).collect())
    }

    pub fn map(&self, f: impl Fn(&Poly) -> Result<Poly, SymbolicError>) -> Result<SPoly, SymbolicError> {
        Ok(SPoly::from_coeffs(
            self.coeffs.iter().map(f).collect::<Result<_, _>>()?,
        ))
    }

    /// Flatten into a single polynomial with `s` as an ordinary symbol.
    pub fn to_flat(&self) -> Poly {
        let mut out = Poly::zero();
        for (k, c) in self.coeffs.iter().enumerate() {
            out += &c.mul_monomial(&Monomial::var(LAPLACE, k as i32));
        }
        out
    }

    /// Inverse of [`SPoly::to_flat`]; fails on negative powers of `s`.
    pub fn from_flat(p: &Poly) -> Result<SPoly, SymbolicError> {
        let mut buckets: BTreeMap<usize, Vec<(Monomial, _)>> = BTreeMap::new();
        for (m, c) in p.terms() {
            let k = m.exponent(LAPLACE);
            if k < 0 {
                return Err(SymbolicError::NegativeLaplacePower);
            }
            let rest = m.div(&Monomial::var(LAPLACE, k));
            buckets
                .entry(k as usize)
                .or_default()
                .push((rest, c.clone()));
        }
        let len = buckets.keys().next_back().map_or(0, |k| k + 1);
        let mut coeffs = vec![Poly::zero(); len];
        for (k, items) in buckets {
            coeffs[k] = Poly::from_terms(items);
        }
        Ok(SPoly::from_coeffs(coeffs))
    }

    /// Numeric coefficients under a binding, lowest power first.
    pub fn eval_coeffs(&self, env: &BTreeMap<String, f64>) -> Result<Vec<f64>, SymbolicError> {
        self.coeffs.iter().map(|c| c.try_eval(env)).collect()
    }

    pub fn eval(&self, env: &BTreeMap<String, f64>, s: Complex64) -> Result<Complex64, SymbolicError> {
        Ok(horner(&self.eval_coeffs(env)?, s))
    }
}

/// Evaluate `sum c[k] s^k`.
pub fn horner(coeffs: &[f64], s: Complex64) -> Complex64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
}

impl fmt::Debug for SPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SPoly({self})")
    }
}

impl fmt::Display for SPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        let parts: Vec<String> = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(k, c)| match k {
                0 => format!("({c})"),
                1 => format!("({c})*s"),
                _ => format!("({c})*s^{k}"),
            })
            .collect();
        f.write_str(&parts.join(" + "))
    }
}

impl Add<&SPoly> for &SPoly {
    type Output = SPoly;
    fn add(self, rhs: &SPoly) -> SPoly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        SPoly::from_coeffs((0..n).map(|k| &self.coeff(k) + &rhs.coeff(k)).collect())
    }
}

impl Sub<&SPoly> for &SPoly {
    type Output = SPoly;
    fn sub(self, rhs: &SPoly) -> SPoly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        SPoly::from_coeffs((0..n).map(|k| &self.coeff(k) - &rhs.coeff(k)).collect())
    }
}

impl Neg for &SPoly {
    type Output = SPoly;
    fn neg(self) -> SPoly {
        SPoly::from_coeffs(self.coeffs.iter().map(|c| -c).collect())
    }
}

impl Mul<&SPoly> for &SPoly {
    type Output = SPoly;
    fn mul(self, rhs: &SPoly) -> SPoly {
        if self.is_zero() || rhs.is_zero() {
            return SPoly::zero();
        }
        let mut out = vec![Poly::zero(); self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += &(a * b);
            }
        }
        SPoly::from_coeffs(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(cs: &[&str]) -> SPoly {
        SPoly::from_coeffs(cs.iter().map(|c| Poly::parse(c).unwrap()).collect())
    }

    #[test]
    fn flat_roundtrip() {
        let a = sp(&["G1/R", "0", "C1*C2 - x"]);
        let flat = a.to_flat();
        assert_eq!(flat, Poly::parse("G1/R + s^2*C1*C2 - s^2*x").unwrap());
        assert_eq!(SPoly::from_flat(&flat).unwrap(), a);
    }

    #[test]
    fn product_degree() {
        let a = sp(&["1", "x"]);
        let b = sp(&["2", "0", "y"]);
        let c = &a * &b;
        assert_eq!(c.degree(), Some(3));
        assert_eq!(c, sp(&["2", "2*x", "y", "x*y"]));
        assert!((&c - &c).is_zero());
    }

    #[test]
    fn horner_matches_direct() {
        let s = Complex64::new(0.3, -1.2);
        let v = horner(&[1.0, 2.0, 3.0], s);
        let d = 1.0 + 2.0 * s + 3.0 * s * s;
        assert!((v - d).norm() < 1e-12);
    }
}
