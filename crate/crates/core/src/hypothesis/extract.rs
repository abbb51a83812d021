use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::interval::{poly_interval, rational_interval, Sign};
use super::{
    canonical_sides, Context, Hypothesis, HypothesisError, HypothesisKind, HypothesisSpec, Margins,
    Rules, RULE_SEPARATION,
};
use crate::symbolic::{Poly, Rational, RationalExpr, TransferFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    Lhp,
    Rhp,
    Ambiguous,
}

impl Plane {
    fn from_sign(s: Sign) -> Plane {
        match s {
            Sign::Positive => Plane::Lhp,
            Sign::Negative => Plane::Rhp,
            _ => Plane::Ambiguous,
        }
    }
}

/// A real root approximated by a ratio of adjacent coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealRoot {
    pub label: String,
    /// Signed root value `-low/high`.
    pub root: RationalExpr,
    pub plane: Plane,
    /// The adjacent coefficients the root was read from.
    pub low: Poly,
    pub high: Poly,
}

impl RealRoot {
    /// `|root|`, valid once the plane is known.
    pub fn magnitude(&self) -> Option<RationalExpr> {
        match self.plane {
            Plane::Lhp => Some(self.root.neg()),
            Plane::Rhp => Some(self.root.clone()),
            Plane::Ambiguous => None,
        }
    }
}

/// A complex-conjugate pair `c2 s^2 + c1 s + c0`, kept squared so that both
/// quantities stay rational.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexPair {
    pub label: String,
    pub omega_n_sq: RationalExpr,
    pub zeta_sq: RationalExpr,
    pub plane: Plane,
    /// `[c0, c1, c2]`.
    pub coeffs: Vec<Poly>,
}

impl ComplexPair {
    pub fn roots(&self, env: &BTreeMap<String, f64>) -> [Complex64; 2] {
        let wn = self.omega_n_sq.eval(env).abs().sqrt();
        let zeta = self.zeta_sq.eval(env).abs().sqrt();
        let sign = if self.plane == Plane::Rhp { 1.0 } else { -1.0 };
        let re = sign * zeta * wn;
        let im = wn * (1.0 - zeta * zeta).max(0.0).sqrt();
        let real_split = wn * (zeta * zeta - 1.0).max(0.0).sqrt();
        if zeta >= 1.0 {
            [Complex64::new(re + sign * real_split, 0.0), Complex64::new(re - sign * real_split, 0.0)]
        } else {
            [Complex64::new(re, im), Complex64::new(re, -im)]
        }
    }
}

/// Approximate poles and zeros. Real poles are ordered dominant first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PzModel {
    pub zeros: Vec<RealRoot>,
    pub zero_pairs: Vec<ComplexPair>,
    pub poles: Vec<RealRoot>,
    pub pole_pairs: Vec<ComplexPair>,
    /// Ids of the separation hypotheses the decomposition relies on.
    pub enabling: Vec<String>,
}

impl PzModel {
    pub fn dominant_pole(&self) -> Option<&RealRoot> {
        self.poles.first()
    }

    /// Labelled numeric roots at a design point.
    pub fn numeric(&self, env: &BTreeMap<String, f64>) -> (Vec<(String, Complex64)>, Vec<(String, Complex64)>) {
        let expand = |reals: &[RealRoot], pairs: &[ComplexPair]| {
            let mut out: Vec<(String, Complex64)> = reals
                .iter()
                .map(|r| (r.label.clone(), Complex64::new(r.root.eval(env), 0.0)))
                .collect();
            for p in pairs {
                let [a, b] = p.roots(env);
                out.push((format!("{}+", p.label), a));
                out.push((format!("{}-", p.label), b));
            }
            out
        };
        (expand(&self.zeros, &self.zero_pairs), expand(&self.poles, &self.pole_pairs))
    }
}

/// Factor the simplified numerator and denominator into approximate roots.
///
/// Quadratics are split into two real roots when the separation hypothesis
/// `c1^2 >= 4 K_sep c0 c2` can hold somewhere in the box; otherwise they stay
/// a complex pair. Cubic and quartic factors use the chained form
/// `c_k^2 >= K_sep c_{k-1} c_{k+1}`, falling back to splitting off only the
/// dominant root.
pub fn extract_pz(
    tf: &TransferFunction,
    ctx: &Context,
    margins: &Margins,
    rules: &Rules,
) -> Result<(PzModel, Vec<Hypothesis>), HypothesisError> {
    if tf.den.is_zero() {
        return Err(HypothesisError::ZeroDenominator);
    }
    let mut hyps = Vec::new();
    let mut f = Factorizer {
        ctx,
        margins,
        rules,
        hyps: &mut hyps,
    };
    let (zeros, zero_pairs) = f.factor(tf.num.coeffs(), "numerator", 'z')?;
    let (poles, pole_pairs) = f.factor(tf.den.coeffs(), "denominator", 'p')?;
    let enabling = hyps.iter().map(|h| h.id.clone()).collect();
    Ok((
        PzModel {
            zeros,
            zero_pairs,
            poles,
            pole_pairs,
            enabling,
        },
        hyps,
    ))
}

struct Factorizer<'a> {
    ctx: &'a Context,
    margins: &'a Margins,
    rules: &'a Rules,
    hyps: &'a mut Vec<Hypothesis>,
}

type Factored = (Vec<RealRoot>, Vec<ComplexPair>);

impl Factorizer<'_> {
    fn sign(&self, p: &Poly) -> Sign {
        poly_interval(p, &self.ctx.bounds).sign()
    }

    fn ratio(&self, num: Poly, den: Poly) -> RationalExpr {
        RationalExpr::new(num, den).expect("non-zero coefficient")
    }

    fn factor(&mut self, coeffs: &[Poly], what: &'static str, tag: char) -> Result<Factored, HypothesisError> {
        let mut reals = Vec::new();
        let mut pairs = Vec::new();
        if coeffs.is_empty() {
            return Ok((reals, pairs));
        }
        let degree = coeffs.len() - 1;
        if degree > 4 {
            return Err(HypothesisError::DegreeTooHigh { what, degree });
        }
        // A single root may sit in either half-plane; positioning resolves it.
        if degree > 1 && matches!(self.sign(&coeffs[degree]), Sign::Mixed | Sign::Zero) {
            return Err(HypothesisError::LeadingSignAmbiguous(what));
        }
        // Roots at the origin.
        let mut start = 0;
        while coeffs[start].is_zero() {
            start += 1;
            reals.push(RealRoot {
                label: format!("{tag}{}", reals.len() + 1),
                root: RationalExpr::from_poly(Poly::zero()),
                plane: Plane::Lhp,
                low: Poly::zero(),
                high: coeffs[start].clone(),
            });
        }
        self.split(&coeffs[start..], what, tag, &mut reals, &mut pairs)?;
        Ok((reals, pairs))
    }

    fn real_root(&self, lo: &Poly, hi: &Poly, label: String) -> RealRoot {
        RealRoot {
            label,
            root: self.ratio(lo.clone(), hi.clone()).neg(),
            plane: Plane::from_sign(self.sign(lo).mul(self.sign(hi))),
            low: lo.clone(),
            high: hi.clone(),
        }
    }

    /// Separation hypothesis `c_k^2 >= coeff * K * |c_{k-1} c_{k+1}|`, or `None`
    /// when it cannot hold anywhere in the box.
    fn separation(&self, c: &[Poly], k: usize, coeff: f64, origin: &str) -> Option<Hypothesis> {
        if !self.rules.separation {
            return None;
        }
        // Roots separate when c_k^2 dominates |c_{k-1} c_{k+1}|. A product of
        // unknown sign is compared squared.
        let outer = &c[k - 1] * &c[k + 1];
        let (lhs, rhs, coeff, exp) = match self.sign(&outer) {
            Sign::Negative => (c[k].pow(2), -&outer, coeff, 1),
            Sign::Mixed => (c[k].pow(4), outer.pow(2), coeff * coeff, 2),
            _ => (c[k].pow(2), outer, coeff, 1),
        };
        let k_sep = self.margins.k_sep_for(origin);
        let factor = coeff * k_sep.powi(exp);
        let ratio = rational_interval(&self.ratio(rhs.clone(), lhs.clone()), &self.ctx.bounds);
        if ratio.lo * factor > 1.0 {
            return None;
        }
        let (l, r) = canonical_sides(&lhs, &rhs);
        let h = Hypothesis::build(
            HypothesisSpec {
                kind: HypothesisKind::B,
                rule: RULE_SEPARATION,
                origin,
                lhs: RationalExpr::from_poly(l),
                rhs: RationalExpr::from_poly(r),
                margin: k_sep,
                factor_coeff: coeff,
                margin_exp: exp,
                justification: format!(
                    "{origin}: c{k}^2 / |c{}*c{}| ranges over 1/{}; real roots separate when it exceeds {factor}",
                    k - 1,
                    k + 1,
                    ratio
                ),
            },
            &self.ctx.bounds,
        );
        Some(h)
    }

    fn split(
        &mut self,
        c: &[Poly],
        what: &'static str,
        tag: char,
        reals: &mut Vec<RealRoot>,
        pairs: &mut Vec<ComplexPair>,
    ) -> Result<(), HypothesisError> {
        let n = c.len().saturating_sub(1);
        let next = |reals: &Vec<RealRoot>, pairs: &Vec<ComplexPair>, off: usize| {
            format!("{tag}{}", reals.len() + 2 * pairs.len() + 1 + off)
        };
        match n {
            0 => Ok(()),
            1 => {
                let label = next(reals, pairs, 0);
                reals.push(self.real_root(&c[0], &c[1], label));
                Ok(())
            }
            2 => {
                let (l1, l2) = (next(reals, pairs, 0), next(reals, pairs, 1));
                let origin = format!("{l1}/{l2}");
                if let Some(h) = self.separation(c, 1, 4.0, &origin) {
                    self.hyps.push(h);
                    reals.push(self.real_root(&c[0], &c[1], l1));
                    reals.push(self.real_root(&c[1], &c[2], l2));
                } else {
                    pairs.push(ComplexPair {
                        label: format!("{l1},{l2}"),
                        omega_n_sq: self.ratio(c[0].clone(), c[2].clone()),
                        zeta_sq: self.ratio(c[1].pow(2), (&c[0] * &c[2]).scale(&Rational::from_integer(4.into()))),
                        plane: Plane::from_sign(self.sign(&c[1]).mul(self.sign(&c[2]))),
                        coeffs: c.to_vec(),
                    });
                }
                Ok(())
            }
            _ => {
                let labels: Vec<String> = (0..=n).map(|i| next(reals, pairs, i)).collect();
                let chain: Vec<Option<Hypothesis>> = (1..n)
                    .map(|k| self.separation(c, k, 1.0, &format!("{}/{}", labels[k - 1], labels[k])))
                    .collect();
                if chain.iter().all(Option::is_some) {
                    self.hyps.extend(chain.into_iter().flatten());
                    for k in 1..=n {
                        reals.push(self.real_root(&c[k - 1], &c[k], labels[k - 1].clone()));
                    }
                    return Ok(());
                }
                let Some(first) = chain.into_iter().next().flatten() else {
                    return Err(HypothesisError::NoDominantRoot(what));
                };
                self.hyps.push(first);
                reals.push(self.real_root(&c[0], &c[1], labels[0].clone()));
                self.split(&c[1..], what, tag, reals, pairs)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library;
    use crate::netlist::{elaborate, parse_netlist};
    use crate::symbolic::{derive_transfer_function, SPoly, TfForm};
    use crate::hypothesis::simplify_coefficients;

    fn p(s: &str) -> Poly {
        Poly::parse(s).unwrap()
    }

    fn simplified(src: &str) -> (TransferFunction, Context) {
        let t = elaborate(&parse_netlist(src).unwrap()).unwrap();
        let (_, inter) = derive_transfer_function(&t).unwrap();
        let ctx = Context::from_topology(&t);
        (simplify_coefficients(&inter, &ctx, &Margins::default()).tf, ctx)
    }

    #[test]
    fn mzc_roots() {
        let (tf, ctx) = simplified(library::MZC);
        let (pz, hyps) = extract_pz(&tf, &ctx, &Margins::default(), &Rules::default()).unwrap();
        assert_eq!(pz.zeros.len(), 1);
        assert_eq!(pz.zeros[0].plane, Plane::Ambiguous);
        let z1 = RationalExpr::new(tf.a(0), tf.a(1)).unwrap().neg();
        assert!(pz.zeros[0].root.equivalent(&z1));
        let p1 = RationalExpr::new(tf.b(0), tf.b(1)).unwrap().neg();
        let p2 = RationalExpr::new(tf.b(1), tf.b(2)).unwrap().neg();
        assert!(pz.poles[0].root.equivalent(&p1));
        assert!(pz.poles[1].root.equivalent(&p2));
        assert!(pz.poles.iter().all(|r| r.plane == Plane::Lhp));
        assert_eq!(hyps.len(), 1);
        assert_eq!(hyps[0].kind, HypothesisKind::B);
        assert_eq!(hyps[0].factor, 40.0);
        assert!(!hyps[0].guaranteed);
        assert_eq!(pz.enabling, vec![hyps[0].id.clone()]);
    }

    #[test]
    fn numeric_quadratic_is_complex() {
        let tf = TransferFunction {
            num: SPoly::constant(p("1")),
            den: SPoly::from_coeffs(vec![p("5"), p("2"), p("1")]),
            form: TfForm::Simplified,
        };
        let ctx = Context {
            bounds: Default::default(),
            conductance_groups: vec![],
            parasitic_caps: vec![],
            capacitances: Default::default(),
        };
        let (pz, hyps) = extract_pz(&tf, &ctx, &Margins::default(), &Rules::default()).unwrap();
        assert!(hyps.is_empty());
        let pair = &pz.pole_pairs[0];
        let env = BTreeMap::new();
        assert!((pair.omega_n_sq.eval(&env) - 5.0).abs() < 1e-12);
        assert!((pair.zeta_sq.eval(&env) - 0.2).abs() < 1e-12);
        let [a, b] = pair.roots(&env);
        assert!((a - Complex64::new(-1.0, 2.0)).norm() < 1e-12);
        assert!((b - Complex64::new(-1.0, -2.0)).norm() < 1e-12);
    }

    #[test]
    fn widely_spaced_cubic_is_fully_real() {
        // (s+1)(s+100)(s+10000)
        let tf = TransferFunction {
            num: SPoly::constant(p("1")),
            den: SPoly::from_coeffs(vec![p("1000000"), p("1010100"), p("10101"), p("1")]),
            form: TfForm::Simplified,
        };
        let ctx = Context {
            bounds: Default::default(),
            conductance_groups: vec![],
            parasitic_caps: vec![],
            capacitances: Default::default(),
        };
        let (pz, hyps) = extract_pz(&tf, &ctx, &Margins::default(), &Rules::default()).unwrap();
        assert_eq!(pz.poles.len(), 3);
        assert_eq!(hyps.len(), 2);
        assert!(hyps.iter().all(|h| h.guaranteed));
        let env = BTreeMap::new();
        let r: Vec<f64> = pz.poles.iter().map(|x| x.root.eval(&env)).collect();
        assert!((r[0] + 1.0).abs() < 0.02 && (r[1] + 100.0).abs() < 2.0 && (r[2] + 10101.0).abs() < 1.0);
    }

    #[test]
    fn nmc_has_dominant_pole() {
        let (tf, ctx) = simplified(library::NMC);
        let (pz, _) = extract_pz(&tf, &ctx, &Margins::default(), &Rules::default()).unwrap();
        assert!(!pz.poles.is_empty());
        assert_eq!(pz.poles.len() + 2 * pz.pole_pairs.len(), tf.den.degree().unwrap());
        assert_eq!(pz.zeros.len() + 2 * pz.zero_pairs.len(), tf.num.degree().unwrap());
    }
}
