//! Explicit, auditable approximation steps.
//!
//! Every approximation made on the way from the exact transfer function to
//! closed-form metrics is recorded as an inequality `lhs >= K * rhs`:
//! kind A justifies dropping coefficient terms, kind B justifies separating
//! real roots, and kind C positions poles and zeros for stability. The
//! inequalities become constraints of the sizing problem.

mod extract;
pub mod interval;
mod position;
mod simplify;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::netlist::{ParasiticKind, PassiveKind, Topology, VarKind};
use crate::symbolic::{Monomial, Poly, RationalExpr};

pub use extract::{extract_pz, ComplexPair, Plane, PzModel, RealRoot};
pub use interval::{poly_interval, rational_interval, term_interval, Bounds, Interval, Sign};
pub use position::position_pz;
pub use simplify::{simplify_coefficients, CoefficientDecision, CoefficientReport, Simplification};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HypothesisError {
    #[error("{what} has degree {degree}; at most 4 is supported")]
    DegreeTooHigh { what: &'static str, degree: usize },
    #[error("leading coefficient of the {0} can change sign over the design box")]
    LeadingSignAmbiguous(&'static str),
    #[error("the {0} has no separable dominant real root")]
    NoDominantRoot(&'static str),
    #[error("the transfer function has a zero denominator")]
    ZeroDenominator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HypothesisKind {
    /// Coefficient simplification.
    A,
    /// Root separation.
    B,
    /// Pole/zero positioning.
    C,
}

/// Margin constants. `k_dom` and `k_sep` may be overridden per origin
/// (coefficient label or root pair) by the design loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub k_dom: f64,
    pub k_sep: f64,
    pub k_auto: f64,
    pub kappa_p: f64,
    pub kappa_z: f64,
    pub zeta_min: f64,
    pub zero_lhp: f64,
    pub cancel_band: (f64, f64),
    #[serde(default)]
    pub k_dom_overrides: BTreeMap<String, f64>,
    #[serde(default)]
    pub k_sep_overrides: BTreeMap<String, f64>,
}

impl Default for Margins {
    fn default() -> Self {
        Margins {
            k_dom: 10.0,
            k_sep: 10.0,
            k_auto: 100.0,
            kappa_p: 2.0,
            kappa_z: 10.0,
            zeta_min: 0.5,
            zero_lhp: 1.1,
            cancel_band: (0.8, 1.25),
            k_dom_overrides: BTreeMap::new(),
            k_sep_overrides: BTreeMap::new(),
        }
    }
}

impl Margins {
    pub fn k_dom_for(&self, origin: &str) -> f64 {
        self.k_dom_overrides.get(origin).copied().unwrap_or(self.k_dom)
    }

    pub fn k_sep_for(&self, origin: &str) -> f64 {
        self.k_sep_overrides.get(origin).copied().unwrap_or(self.k_sep)
    }
}

/// Positioning rule identifiers, usable with `--disable-rule`.
pub const RULE_DOMINANCE: &str = "c-dominance";
pub const RULE_ZERO_LHP: &str = "c-zero-lhp";
pub const RULE_ZERO_RHP: &str = "c-zero-rhp";
pub const RULE_COMPLEX: &str = "c-complex";
pub const RULE_CANCEL: &str = "c-cancel";
pub const RULE_SEPARATION: &str = "b-separation";
pub const RULE_SIMPLIFY: &str = "a-simplify";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rules {
    pub dominance: bool,
    pub zero_lhp: bool,
    pub zero_rhp: bool,
    pub complex: bool,
    pub cancel: bool,
    pub separation: bool,
}

impl Default for Rules {
    fn default() -> Self {
        Rules {
            dominance: true,
            zero_lhp: true,
            zero_rhp: true,
            complex: true,
            cancel: false,
            separation: true,
        }
    }
}

impl Rules {
    pub const IDS: [&'static str; 6] = [
        RULE_DOMINANCE,
        RULE_ZERO_LHP,
        RULE_ZERO_RHP,
        RULE_COMPLEX,
        RULE_CANCEL,
        RULE_SEPARATION,
    ];

    fn slot(&mut self, id: &str) -> Option<&mut bool> {
        Some(match id {
            RULE_DOMINANCE | "coupling" => &mut self.dominance,
            RULE_ZERO_LHP => &mut self.zero_lhp,
            RULE_ZERO_RHP => &mut self.zero_rhp,
            RULE_COMPLEX => &mut self.complex,
            RULE_CANCEL => &mut self.cancel,
            RULE_SEPARATION => &mut self.separation,
            _ => return None,
        })
    }

    /// Toggle a rule by id; returns false for an unknown id.
    pub fn set(&mut self, id: &str, on: bool) -> bool {
        match self.slot(id) {
            Some(s) => {
                *s = on;
                true
            }
            None => false,
        }
    }
}

/// Structural facts about a topology needed by the rule table.
#[derive(Debug, Clone)]
pub struct Context {
    pub bounds: Bounds,
    /// Per node: the monomials of every conductance to ground or to another
    /// node (`G/A` for stage outputs, `1/R` for resistors).
    pub conductance_groups: Vec<Vec<Monomial>>,
    /// Monomials making up parasitic capacitances (`G/omega_t`).
    pub parasitic_caps: Vec<Monomial>,
    pub capacitances: BTreeSet<String>,
}

impl Context {
    pub fn from_topology(t: &Topology) -> Self {
        let mut groups: BTreeMap<&str, Vec<Monomial>> = BTreeMap::new();
        let mut parasitic_caps = Vec::new();
        for p in &t.parasitics {
            match p.kind {
                ParasiticKind::Resistance => {
                    if let Some((m, _)) = p.expr.single_term() {
                        groups.entry(&p.node).or_default().push(m.inverse());
                    }
                }
                ParasiticKind::Capacitance => {
                    parasitic_caps.extend(p.expr.terms().map(|(m, _)| m.clone()));
                }
            }
        }
        for r in t.passives.iter().filter(|p| p.kind == PassiveKind::Resistor) {
            for node in [&r.node_a, &r.node_b] {
                groups
                    .entry(node)
                    .or_default()
                    .push(Monomial::var(&r.value_var, -1));
            }
        }
        Context {
            bounds: t.bounds(),
            conductance_groups: groups.into_values().collect(),
            parasitic_caps,
            capacitances: t
                .variables
                .iter()
                .filter(|v| v.kind == VarKind::Capacitance)
                .map(|v| v.name.clone())
                .collect(),
        }
    }

    /// True when `ratio == y / y'` for two conductances at one node.
    fn is_sibling_ratio(&self, ratio: &Monomial) -> bool {
        self.conductance_groups.iter().any(|g| {
            g.iter()
                .any(|y| g.iter().any(|y2| y != y2 && &y.div(y2) == ratio))
        })
    }

    /// True when `ratio == Cp_term / C` for a parasitic capacitance term and a
    /// capacitor variable.
    fn is_parasitic_cap_ratio(&self, ratio: &Monomial) -> bool {
        self.parasitic_caps.iter().any(|cp| {
            self.capacitances
                .iter()
                .any(|c| &cp.div(&Monomial::var(c, 1)) == ratio)
        })
    }
}

/// Interval evidence recorded when a hypothesis is emitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub lhs: Interval,
    pub rhs: Interval,
    /// Range of `rhs / lhs` over the box (the dominated fraction).
    pub ratio: Interval,
}

/// An inequality `lhs >= factor * rhs` introduced to justify an approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub kind: HypothesisKind,
    pub rule: String,
    /// What produced it: a coefficient label (`b1`), root label (`p2`), …
    pub origin: String,
    pub lhs: RationalExpr,
    pub rhs: RationalExpr,
    /// User-facing margin constant (`K_dom`, `K_sep`, `kappa_p`, …).
    pub margin: f64,
    /// Multiplier in the relation: `factor = coeff * margin^exp`.
    pub factor: f64,
    pub factor_coeff: f64,
    pub margin_exp: i32,
    /// Holds everywhere in the design box.
    pub guaranteed: bool,
    /// Both sides are positive over the box, so the constraint is imposed as
    /// a log ratio.
    pub log_form: bool,
    pub evidence: Evidence,
    pub justification: String,
}

pub(crate) struct HypothesisSpec<'a> {
    pub kind: HypothesisKind,
    pub rule: &'a str,
    pub origin: &'a str,
    pub lhs: RationalExpr,
    pub rhs: RationalExpr,
    pub margin: f64,
    pub factor_coeff: f64,
    pub margin_exp: i32,
    pub justification: String,
}

impl Hypothesis {
    pub(crate) fn build(spec: HypothesisSpec<'_>, bounds: &Bounds) -> Hypothesis {
        let lhs_i = rational_interval(&spec.lhs, bounds);
        let rhs_i = rational_interval(&spec.rhs, bounds);
        let ratio = rational_interval(&spec.rhs.div(&spec.lhs).unwrap_or_else(|_| spec.rhs.clone()), bounds);
        let factor = spec.factor_coeff * spec.margin.powi(spec.margin_exp);
        let log_form = lhs_i.sign() == Sign::Positive && rhs_i.sign() == Sign::Positive;
        let guaranteed = log_form && ratio.hi * factor <= 1.0;
        Hypothesis {
            id: hypothesis_id(spec.kind, spec.rule, spec.origin, &spec.lhs, &spec.rhs),
            kind: spec.kind,
            rule: spec.rule.to_string(),
            origin: spec.origin.to_string(),
            lhs: spec.lhs,
            rhs: spec.rhs,
            margin: spec.margin,
            factor,
            factor_coeff: spec.factor_coeff,
            margin_exp: spec.margin_exp,
            guaranteed,
            log_form,
            evidence: Evidence {
                lhs: lhs_i,
                rhs: rhs_i,
                ratio,
            },
            justification: spec.justification,
        }
    }

    /// Same relation with a new margin.
    pub fn with_margin(&self, margin: f64) -> Hypothesis {
        let mut h = self.clone();
        h.margin = margin;
        h.factor = h.factor_coeff * margin.powi(h.margin_exp);
        h.guaranteed = h.log_form && h.evidence.ratio.hi * h.factor <= 1.0;
        h
    }

    pub fn sides(&self, env: &BTreeMap<String, f64>) -> (f64, f64) {
        (self.lhs.eval(env), self.factor * self.rhs.eval(env))
    }

    /// Normalized constraint value; non-negative iff the relation holds.
    pub fn value(&self, env: &BTreeMap<String, f64>) -> f64 {
        let (l, r) = self.sides(env);
        normalized_gap(l, r, self.log_form)
    }

    pub fn holds(&self, env: &BTreeMap<String, f64>, rel_tol: f64) -> bool {
        let (l, r) = self.sides(env);
        l >= r - rel_tol * r.abs().max(l.abs())
    }

    /// `lhs / (factor * rhs) - 1`: fractional headroom at a point. A
    /// non-positive right side leaves unbounded headroom (or none).
    pub fn slack(&self, env: &BTreeMap<String, f64>) -> f64 {
        let (l, r) = self.sides(env);
        match (r > 0.0, l >= r) {
            (true, _) => l / r - 1.0,
            (false, true) => f64::INFINITY,
            (false, false) => f64::NEG_INFINITY,
        }
    }

    pub fn relation(&self) -> String {
        format!("{} >= {} * {}", wrap(&self.lhs), fmt_factor(self.factor), wrap(&self.rhs))
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{:?}] {} {}: {}",
            self.kind,
            self.id,
            self.origin,
            self.relation()
        )?;
        if self.guaranteed {
            f.write_str("  (guaranteed by bounds)")?;
        }
        Ok(())
    }
}

fn wrap(r: &RationalExpr) -> String {
    let s = r.to_string();
    if s.contains(' ') {
        format!("({s})")
    } else {
        s
    }
}

fn fmt_factor(k: f64) -> String {
    let s = format!("{k}");
    if s.len() > 8 {
        format!("{k:.4}")
    } else {
        s
    }
}

/// Constraint value used by both the optimizer and the audit trail.
pub fn normalized_gap(lhs: f64, rhs: f64, log_form: bool) -> f64 {
    if log_form {
        if lhs <= 0.0 || rhs <= 0.0 {
            return (lhs - rhs) / (lhs.abs() + rhs.abs() + f64::MIN_POSITIVE);
        }
        lhs.ln() - rhs.ln()
    } else {
        (lhs - rhs) / (lhs.abs() + rhs.abs() + f64::MIN_POSITIVE)
    }
}

/// Deterministic content hash over everything except the margin.
pub fn hypothesis_id(
    kind: HypothesisKind,
    rule: &str,
    origin: &str,
    lhs: &RationalExpr,
    rhs: &RationalExpr,
) -> String {
    let text = format!(
        "{kind:?}|{rule}|{origin}|{}|{}|{}|{}",
        lhs.num.canonical(),
        lhs.den.canonical(),
        rhs.num.canonical(),
        rhs.den.canonical()
    );
    let digest = Sha256::digest(text.as_bytes());
    let hex: String = digest.iter().take(4).map(|b| format!("{b:02x}")).collect();
    format!("{kind:?}-{hex}")
}

/// Cancel the common monomial factor of both sides. When both sides are
/// single terms, negative exponents are also cleared, so `G1*G2 >= K*G1*Gf/A1`
/// reads `A1*G2 >= K*Gf`.
pub(crate) fn canonical_sides(lhs: &Poly, rhs: &Poly) -> (Poly, Poly) {
    let meet = |l: &Poly, r: &Poly| {
        let mut monomials = l.terms().chain(r.terms()).map(|(m, _)| m);
        monomials
            .next()
            .map(|first| monomials.fold(first.clone(), |acc, m| acc.meet(m)))
    };
    let part = |m: &Monomial, positive: bool| {
        Monomial::from_pairs(
            m.exponents()
                .iter()
                .filter(|(_, e)| (*e > 0) == positive)
                .cloned(),
        )
    };
    let Some(common) = meet(lhs, rhs) else {
        return (lhs.clone(), rhs.clone());
    };
    let inv = part(&common, true).inverse();
    let (l, r) = (lhs.mul_monomial(&inv), rhs.mul_monomial(&inv));
    if l.len() > 1 || r.len() > 1 {
        return (l, r);
    }
    let clear = meet(&l, &r).map(|m| part(&m, false).inverse()).unwrap_or_default();
    (l.mul_monomial(&clear), r.mul_monomial(&clear))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_ignore_margin_and_are_stable() {
        let l = RationalExpr::from_poly(Poly::parse("Gf").unwrap());
        let r = RationalExpr::from_poly(Poly::parse("G1").unwrap());
        let a = hypothesis_id(HypothesisKind::C, RULE_ZERO_LHP, "z1", &l, &r);
        let b = hypothesis_id(HypothesisKind::C, RULE_ZERO_LHP, "z1", &l, &r);
        assert_eq!(a, b);
        assert!(a.starts_with("C-") && a.len() == 10);
        let c = hypothesis_id(HypothesisKind::C, RULE_ZERO_LHP, "z1", &r, &l);
        assert_ne!(a, c);
    }

    #[test]
    fn canonical_sides_clear_content() {
        let (l, r) = canonical_sides(
            &Poly::parse("G1*G2").unwrap(),
            &Poly::parse("G1*Gf/A1").unwrap(),
        );
        assert_eq!(l, Poly::parse("A1*G2").unwrap());
        assert_eq!(r, Poly::parse("Gf").unwrap());
    }

    #[test]
    fn gap_sign_matches_relation() {
        assert!(normalized_gap(2.0, 1.0, true) > 0.0);
        assert!(normalized_gap(1.0, 2.0, true) < 0.0);
        assert!(normalized_gap(-1.0, -2.0, false) > 0.0);
        assert!(normalized_gap(-3.0, 2.0, false) < 0.0);
    }

    #[test]
    fn rule_toggles() {
        let mut r = Rules::default();
        assert!(r.set("coupling", false));
        assert!(!r.dominance);
        assert!(!r.set("nope", true));
    }
}
