//! Exact multivariate Laurent polynomials over the rationals.
//!
//! Exponents are signed so that conductances such as `G/A` and `1/R_L` stay
//! single monomials; no denominator clearing is ever required.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::SymbolicError;

pub type Rational = BigRational;

/// Power product of symbols; zero exponents are never stored.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default)]
pub struct Monomial {
    exps: Vec<(String, i32)>,
}

impl Monomial {
    pub fn one() -> Self {
        Monomial::default()
    }

    pub fn var(name: &str, exp: i32) -> Self {
        Monomial::from_pairs([(name.to_string(), exp)])
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, i32)>) -> Self {
        let mut map: BTreeMap<String, i32> = BTreeMap::new();
        for (k, e) in pairs {
            *map.entry(k).or_insert(0) += e;
        }
        Monomial {
            exps: map.into_iter().filter(|(_, e)| *e != 0).collect(),
        }
    }

    pub fn exponents(&self) -> &[(String, i32)] {
        &self.exps
    }

    pub fn exponent(&self, name: &str) -> i32 {
        self.exps
            .binary_search_by(|(k, _)| k.as_str().cmp(name))
            .map(|i| self.exps[i].1)
            .unwrap_or(0)
    }

    pub fn is_one(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn degree(&self) -> i32 {
        self.exps.iter().map(|(_, e)| e).sum()
    }

    fn combine(&self, other: &Monomial, sign: i32) -> Monomial {
        let mut out = Vec::with_capacity(self.exps.len() + other.exps.len());
        let (mut i, mut j) = (0, 0);
        while i < self.exps.len() || j < other.exps.len() {
            let ord = match (self.exps.get(i), other.exps.get(j)) {
                (Some(a), Some(b)) => a.0.cmp(&b.0),
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => unreachable!(),
            };
            match ord {
                Ordering::Less => {
                    out.push(self.exps[i].clone());
                    i += 1;
                }
                Ordering::Greater => {
                    let (k, e) = &other.exps[j];
                    out.push((k.clone(), sign * e));
                    j += 1;
                }
                Ordering::Equal => {
                    let e = self.exps[i].1 + sign * other.exps[j].1;
                    if e != 0 {
                        out.push((self.exps[i].0.clone(), e));
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        Monomial { exps: out }
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        self.combine(other, 1)
    }

    pub fn div(&self, other: &Monomial) -> Monomial {
        self.combine(other, -1)
    }

    pub fn inverse(&self) -> Monomial {
        Monomial {
            exps: self.exps.iter().map(|(k, e)| (k.clone(), -e)).collect(),
        }
    }

    pub fn pow(&self, n: i32) -> Monomial {
        if n == 0 {
            return Monomial::one();
        }
        Monomial {
            exps: self.exps.iter().map(|(k, e)| (k.clone(), e * n)).collect(),
        }
    }

    /// Per-symbol minimum of the two exponent maps (absent symbols count as 0).
    pub fn meet(&self, other: &Monomial) -> Monomial {
        let names: BTreeSet<&str> = self
            .exps
            .iter()
            .chain(other.exps.iter())
            .map(|(k, _)| k.as_str())
            .collect();
        Monomial::from_pairs(
            names
                .into_iter()
                .map(|k| (k.to_string(), self.exponent(k).min(other.exponent(k)))),
        )
    }

    /// Lexicographic comparison with symbols ordered by name.
    pub fn lex_cmp(&self, other: &Monomial) -> Ordering {
        let (mut i, mut j) = (0, 0);
        loop {
            match (self.exps.get(i), other.exps.get(j)) {
                (None, None) => return Ordering::Equal,
                (Some(a), None) => return a.1.cmp(&0),
                (None, Some(b)) => return 0.cmp(&b.1),
                (Some(a), Some(b)) => match a.0.cmp(&b.0) {
                    Ordering::Less => return a.1.cmp(&0),
                    Ordering::Greater => return 0.cmp(&b.1),
                    Ordering::Equal => {
                        if a.1 != b.1 {
                            return a.1.cmp(&b.1);
                        }
                        i += 1;
                        j += 1;
                    }
                },
            }
        }
    }

    pub fn divides(&self, other: &Monomial) -> bool {
        self.exps.iter().all(|(k, e)| other.exponent(k) >= *e)
    }

    pub fn eval(&self, env: &BTreeMap<String, f64>) -> Result<f64, SymbolicError> {
        let mut v = 1.0;
        for (k, e) in &self.exps {
            let x = env
                .get(k)
                .ok_or_else(|| SymbolicError::Unbound(k.clone()))?;
            v *= x.powi(*e);
        }
        Ok(v)
    }
}

/// Graded lexicographic: total degree first, then lexicographic.
impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.lex_cmp(other))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A polynomial: a finite sum of rational multiples of monomials.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Poly {
    terms: BTreeMap<Monomial, Rational>,
}

impl Poly {
    pub fn zero() -> Self {
        Poly::default()
    }

    pub fn one() -> Self {
        Poly::constant(Rational::one())
    }

    pub fn constant(c: Rational) -> Self {
        Poly::term(c, Monomial::one())
    }

    pub fn from_int(c: i64) -> Self {
        Poly::constant(Rational::from_integer(BigInt::from(c)))
    }

    pub fn var(name: &str) -> Self {
        Poly::var_pow(name, 1)
    }

    pub fn var_pow(name: &str, exp: i32) -> Self {
        Poly::term(Rational::one(), Monomial::var(name, exp))
    }

    pub fn term(c: Rational, m: Monomial) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(m, c);
        }
        Poly { terms }
    }

    pub fn from_terms(items: impl IntoIterator<Item = (Monomial, Rational)>) -> Self {
        let mut p = Poly::zero();
        for (m, c) in items {
            p.add_term(m, c);
        }
        p
    }

    fn add_term(&mut self, m: Monomial, c: Rational) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Terms in ascending graded-lex order.
    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, &Rational)> {
        self.terms.iter()
    }

    /// Each term as its own polynomial, highest order first.
    pub fn split_terms(&self) -> Vec<Poly> {
        self.terms
            .iter()
            .rev()
            .map(|(m, c)| Poly::term(c.clone(), m.clone()))
            .collect()
    }

    pub fn single_term(&self) -> Option<(&Monomial, &Rational)> {
        if self.terms.len() == 1 {
            self.terms.iter().next()
        } else {
            None
        }
    }

    pub fn as_constant(&self) -> Option<Rational> {
        match self.terms.len() {
            0 => Some(Rational::zero()),
            1 => self
                .terms
                .iter()
                .next()
                .filter(|(m, _)| m.is_one())
                .map(|(_, c)| c.clone()),
            _ => None,
        }
    }

    pub fn variables(&self) -> BTreeSet<String> {
        self.terms
            .keys()
            .flat_map(|m| m.exps.iter().map(|(k, _)| k.clone()))
            .collect()
    }

    pub fn scale(&self, c: &Rational) -> Poly {
        if c.is_zero() {
            return Poly::zero();
        }
        Poly {
            terms: self
                .terms
                .iter()
                .map(|(m, k)| (m.clone(), k * c))
                .collect(),
        }
    }

    pub fn mul_monomial(&self, m: &Monomial) -> Poly {
        Poly {
            terms: self
                .terms
                .iter()
                .map(|(k, c)| (k.mul(m), c.clone()))
                .collect(),
        }
    }

    pub fn pow(&self, n: u32) -> Poly {
        let mut acc = Poly::one();
        for _ in 0..n {
            acc = &acc * self;
        }
        acc
    }

    /// Signs of the coefficients: `Some(+1)`/`Some(-1)` when all agree.
    pub fn uniform_sign(&self) -> Option<i32> {
        let mut signs = self.terms.values().map(|c| if c.is_positive() { 1 } else { -1 });
        let first = signs.next()?;
        signs.all(|s| s == first).then_some(first)
    }

    /// Per-symbol minimum exponent over all terms.
    pub fn monomial_content(&self) -> Monomial {
        let mut iter = self.terms.keys();
        let Some(first) = iter.next() else {
            return Monomial::one();
        };
        iter.fold(first.clone(), |acc, m| acc.meet(m))
    }

    fn lex_leading(&self) -> Option<(&Monomial, &Rational)> {
        self.terms
            .iter()
            .max_by(|a, b| a.0.lex_cmp(b.0))
    }

    /// Exact quotient `self / d`, or `None` when `d` does not divide `self`.
    pub fn div_exact(&self, d: &Poly) -> Option<Poly> {
        if d.is_zero() {
            return None;
        }
        if self.is_zero() {
            return Some(Poly::zero());
        }
        if let Some((m, c)) = d.single_term() {
            return Some(self.mul_monomial(&m.inverse()).scale(&c.recip()));
        }
        let shift_n = self.monomial_content();
        let shift_d = d.monomial_content();
        let num = self.mul_monomial(&shift_n.inverse());
        let den = d.mul_monomial(&shift_d.inverse());
        let (lead_m, lead_c) = den.lex_leading().map(|(m, c)| (m.clone(), c.clone()))?;
        let mut rem = num;
        let mut quot = Poly::zero();
        while let Some((m, c)) = rem.lex_leading().map(|(m, c)| (m.clone(), c.clone())) {
            if !lead_m.divides(&m) {
                return None;
            }
            let step = Poly::term(c / &lead_c, m.div(&lead_m));
            rem = &rem - &(&step * &den);
            quot = quot + step;
        }
        Some(quot.mul_monomial(&shift_n.div(&shift_d)))
    }

    /// Replace `name` by `value`. Negative powers require a single-term value.
    pub fn substitute(&self, name: &str, value: &Poly) -> Result<Poly, SymbolicError> {
        let inverse = value.single_term().map(|(m, c)| Poly::term(c.recip(), m.inverse()));
        let mut out = Poly::zero();
        for (m, c) in &self.terms {
            let e = m.exponent(name);
            if e == 0 {
                out.add_term(m.clone(), c.clone());
                continue;
            }
            let rest = Poly::term(c.clone(), m.div(&Monomial::var(name, e)));
            let factor = if e > 0 {
                value.pow(e as u32)
            } else {
                inverse
                    .as_ref()
                    .ok_or_else(|| SymbolicError::NonMonomialInverse(name.to_string()))?
                    .pow((-e) as u32)
            };
            out = out + &rest * &factor;
        }
        Ok(out)
    }

    pub fn derivative(&self, name: &str) -> Poly {
        Poly::from_terms(self.terms.iter().filter_map(|(m, c)| {
            let e = m.exponent(name);
            (e != 0).then(|| {
                (
                    m.div(&Monomial::var(name, 1)),
                    c * Rational::from_integer(BigInt::from(e)),
                )
            })
        }))
    }

    pub fn try_eval(&self, env: &BTreeMap<String, f64>) -> Result<f64, SymbolicError> {
        let mut acc = 0.0;
        for (m, c) in &self.terms {
            acc += rational_to_f64(c) * m.eval(env)?;
        }
        Ok(acc)
    }

    /// Floating-point evaluation. Panics on an unbound symbol; callers bind
    /// every symbol of the topology up front.
    pub fn eval(&self, env: &BTreeMap<String, f64>) -> f64 {
        self.try_eval(env).unwrap_or_else(|e| panic!("{e}"))
    }

    /// Canonical text: terms in descending graded-lex order, explicit
    /// coefficients and exponents.
    pub fn canonical(&self) -> String {
        if self.is_zero() {
            return "0".to_string();
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .rev()
            .map(|(m, c)| {
                let mut s = c.to_string();
                for (k, e) in &m.exps {
                    s.push_str(&format!("*{k}^{e}"));
                }
                s
            })
            .collect();
        parts.join(" + ")
    }

    pub fn parse(text: &str) -> Result<Poly, SymbolicError> {
        super::parse::parse_poly(text)
    }
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // Very large numerator/denominator: fall back to a scaled division.
        let n = r.numer().to_f64().unwrap_or(f64::INFINITY);
        let d = r.denom().to_f64().unwrap_or(f64::INFINITY);
        n / d
    })
}

impl fmt::Debug for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Poly({self})")
    }
}

fn fmt_factor(name: &str, e: i32) -> String {
    if e == 1 {
        name.to_string()
    } else {
        format!("{name}^{e}")
    }
}

/// Human-readable form, e.g. `G1*G2 + G1*Gf/A1`.
impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        for (i, (m, c)) in self.terms.iter().rev().enumerate() {
            let negative = c.is_negative();
            if i == 0 {
                if negative {
                    f.write_str("-")?;
                }
            } else {
                f.write_str(if negative { " - " } else { " + " })?;
            }
            let mag = c.abs();
            let ups: Vec<String> = m
                .exps
                .iter()
                .filter(|(_, e)| *e > 0)
                .map(|(k, e)| fmt_factor(k, *e))
                .collect();
            let downs: Vec<String> = m
                .exps
                .iter()
                .filter(|(_, e)| *e < 0)
                .map(|(k, e)| fmt_factor(k, -e))
                .collect();
            let mut body = String::new();
            let numer_is_one = mag.numer().is_one();
            if !mag.is_one() && !(numer_is_one && !ups.is_empty()) {
                body.push_str(&mag.numer().to_string());
            }
            if !ups.is_empty() {
                if !body.is_empty() {
                    body.push('*');
                }
                body.push_str(&ups.join("*"));
            }
            if body.is_empty() {
                body.push('1');
            }
            let mut denom: Vec<String> = Vec::new();
            if !mag.denom().is_one() {
                denom.push(mag.denom().to_string());
            }
            denom.extend(downs);
            match denom.len() {
                0 => {}
                1 => body.push_str(&format!("/{}", denom[0])),
                _ => body.push_str(&format!("/({})", denom.join("*"))),
            }
            f.write_str(&body)?;
        }
        Ok(())
    }
}

impl Serialize for Poly {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Poly {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Poly::parse(&text).map_err(serde::de::Error::custom)
    }
}

impl Add<&Poly> for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }
}

impl Add for Poly {
    type Output = Poly;
    fn add(mut self, rhs: Poly) -> Poly {
        for (m, c) in rhs.terms {
            self.add_term(m, c);
        }
        self
    }
}

impl AddAssign<&Poly> for Poly {
    fn add_assign(&mut self, rhs: &Poly) {
        for (m, c) in &rhs.terms {
            self.add_term(m.clone(), c.clone());
        }
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        Poly {
            terms: self.terms.iter().map(|(m, c)| (m.clone(), -c)).collect(),
        }
    }
}

impl Neg for Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        -&self
    }
}

impl Sub<&Poly> for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), -c);
        }
        out
    }
}

impl Sub for Poly {
    type Output = Poly;
    fn sub(self, rhs: Poly) -> Poly {
        &self - &rhs
    }
}

impl Mul<&Poly> for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &rhs.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }
}

impl Mul for Poly {
    type Output = Poly;
    fn mul(self, rhs: Poly) -> Poly {
        &self * &rhs
    }
}
