use std::collections::BTreeMap;

use super::extract::{Plane, PzModel, RealRoot};
use super::interval::{poly_interval, Sign};
use super::{
    canonical_sides, Context, Hypothesis, HypothesisKind, HypothesisSpec, Margins, Rules,
    RULE_CANCEL, RULE_COMPLEX, RULE_DOMINANCE, RULE_ZERO_LHP, RULE_ZERO_RHP,
};
use crate::symbolic::{Poly, RationalExpr};

/// Apply the positioning rule table.
///
/// `gbw_rad` is the closed-form unity-gain angular frequency. Returns the
/// model with sign-ambiguous zeros resolved (when the LHP rule forces them)
/// and the emitted kind-C hypotheses.
pub fn position_pz(
    pz: &PzModel,
    gbw_rad: &RationalExpr,
    ctx: &Context,
    margins: &Margins,
    rules: &Rules,
) -> (PzModel, Vec<Hypothesis>) {
    let mut out = pz.clone();
    let mut hyps = Vec::new();
    let emit = |rule: &str, origin: &str, lhs: RationalExpr, rhs: RationalExpr, margin: f64, coeff: f64, exp: i32, why: String| {
        Hypothesis::build(
            HypothesisSpec {
                kind: HypothesisKind::C,
                rule,
                origin,
                lhs,
                rhs,
                margin,
                factor_coeff: coeff,
                margin_exp: exp,
                justification: why,
            },
            &ctx.bounds,
        )
    };

    if rules.zero_lhp {
        for z in out.zeros.iter_mut().filter(|z| z.plane == Plane::Ambiguous) {
            for (lhs, rhs) in lhp_pairs(z, ctx) {
                hyps.push(emit(
                    RULE_ZERO_LHP,
                    &z.label,
                    RationalExpr::from_poly(lhs),
                    RationalExpr::from_poly(rhs),
                    margins.zero_lhp,
                    1.0,
                    1,
                    format!("{}: sign of the zero depends on the design; forced into the left half-plane", z.label),
                ));
            }
            z.plane = Plane::Lhp;
        }
    }

    if rules.zero_rhp {
        for z in out.zeros.iter().filter(|z| z.plane == Plane::Rhp) {
            let mag = z.magnitude().expect("resolved plane");
            hyps.push(emit(
                RULE_ZERO_RHP,
                &z.label,
                mag,
                gbw_rad.clone(),
                margins.kappa_z,
                1.0,
                1,
                format!("{}: right half-plane zero kept well above the unity-gain frequency", z.label),
            ));
        }
    }

    if rules.dominance {
        for p in out.poles.iter_mut().skip(1) {
            // A stable design needs every pole on the left; fix the sign the
            // same way as for zeros before bounding the magnitude.
            if p.plane == Plane::Ambiguous {
                for (lhs, rhs) in lhp_pairs(p, ctx) {
                    hyps.push(emit(
                        RULE_DOMINANCE,
                        &p.label,
                        RationalExpr::from_poly(lhs),
                        RationalExpr::from_poly(rhs),
                        margins.zero_lhp,
                        1.0,
                        1,
                        format!("{}: sign of the pole depends on the design; forced into the left half-plane", p.label),
                    ));
                }
                p.plane = Plane::Lhp;
            }
            if let Some(mag) = p.magnitude() {
                hyps.push(emit(
                    RULE_DOMINANCE,
                    &p.label,
                    mag,
                    gbw_rad.clone(),
                    margins.kappa_p,
                    1.0,
                    1,
                    format!("{}: non-dominant pole above the unity-gain frequency so the single-pole GBW formula holds", p.label),
                ));
            }
        }
    }

    if rules.complex {
        for pair in &out.pole_pairs {
            let c = &pair.coeffs;
            hyps.push(emit(
                RULE_COMPLEX,
                &format!("{}:zeta", pair.label),
                RationalExpr::from_poly(c[1].pow(2)),
                RationalExpr::from_poly(&c[0] * &c[2]),
                margins.zeta_min,
                4.0,
                2,
                format!("{}: damping ratio of the complex pair bounded below", pair.label),
            ));
            hyps.push(emit(
                RULE_COMPLEX,
                &format!("{}:omega", pair.label),
                pair.omega_n_sq.clone(),
                gbw_rad.mul(gbw_rad),
                margins.kappa_p,
                1.0,
                2,
                format!("{}: natural frequency above the unity-gain frequency", pair.label),
            ));
        }
    }

    if rules.cancel {
        if let Some(p) = out.poles.get(1).and_then(RealRoot::magnitude) {
            let (lo, hi) = margins.cancel_band;
            for z in out.zeros.iter().filter(|z| z.plane == Plane::Lhp) {
                let zm = z.magnitude().expect("resolved plane");
                let why = format!("{}: placed near the first non-dominant pole to cancel it", z.label);
                hyps.push(emit(RULE_CANCEL, &z.label, zm.clone(), p.clone(), lo, 1.0, 1, why.clone()));
                hyps.push(emit(RULE_CANCEL, &z.label, p.clone(), zm, 1.0 / hi, 1.0, 1, why));
            }
        }
    }

    (out, hyps)
}

/// For a root `-low/high` whose sign is not fixed, make both coefficients
/// share one sign. Each wrong-signed term is paired with the right-signed
/// term that is largest relative to it over the design box; per partner the
/// relation is `|partner| >= K * sum |wrong|`.
fn lhp_pairs(z: &RealRoot, ctx: &Context) -> Vec<(Poly, Poly)> {
    let s_low = poly_interval(&z.low, &ctx.bounds).sign();
    let s_high = poly_interval(&z.high, &ctx.bounds).sign();
    let target = s_low.definite().or(s_high.definite()).unwrap_or(1.0);
    let mut out = Vec::new();
    for (coef, sign) in [(&z.low, s_low), (&z.high, s_high)] {
        if sign != Sign::Mixed {
            continue;
        }
        let terms = coef.split_terms();
        let is_right = |t: &Poly| t.uniform_sign() == Some(target as i32);
        let right: Vec<&Poly> = terms.iter().filter(|t| is_right(t)).collect();
        let wrong: Vec<&Poly> = terms.iter().filter(|t| !is_right(t)).collect();
        // Each wrong term is paired with the right term most able to
        // outweigh it over the design box; `None` collects wrong terms no
        // single right term can cover, weighed against the whole right part.
        let mid = |t: &Poly| poly_interval(t, &ctx.bounds).magnitude_mid();
        let mut groups: BTreeMap<Option<usize>, Poly> = BTreeMap::new();
        for w in wrong {
            let wm = mid(w);
            let (best, score) = (0..right.len())
                .map(|i| (i, mid(right[i]) / wm))
                .fold((0, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
            let key = (score >= 1.0).then_some(best);
            let entry = groups.entry(key).or_insert_with(Poly::zero);
            *entry = &*entry + w;
        }
        let all_right = right.iter().fold(Poly::zero(), |acc, t| &acc + *t);
        for (key, ws) in groups {
            let partner = key.map_or(&all_right, |i| right[i]);
            let (l, r) = if target > 0.0 {
                canonical_sides(partner, &-&ws)
            } else {
                canonical_sides(&-partner, &ws)
            };
            out.push((l, r));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::{extract_pz, simplify_coefficients};
    use crate::library;
    use crate::netlist::{elaborate, parse_netlist};
    use crate::symbolic::derive_transfer_function;

    fn p(s: &str) -> Poly {
        Poly::parse(s).unwrap()
    }

    fn run(src: &str) -> (PzModel, Vec<Hypothesis>, RationalExpr) {
        let t = elaborate(&parse_netlist(src).unwrap()).unwrap();
        let (_, inter) = derive_transfer_function(&t).unwrap();
        let ctx = Context::from_topology(&t);
        let m = Margins::default();
        let r = Rules::default();
        let s = simplify_coefficients(&inter, &ctx, &m);
        let (pz, _) = extract_pz(&s.tf, &ctx, &m, &r).unwrap();
        // a0/b1 is gain * |p1| for these topologies.
        let gbw = RationalExpr::new(s.tf.a(0), s.tf.b(1)).unwrap();
        let (pz, h) = position_pz(&pz, &gbw, &ctx, &m, &r);
        (pz, h, gbw)
    }

    #[test]
    fn mzc_constraints() {
        let (pz, h, gbw) = run(library::MZC);
        assert_eq!(gbw, RationalExpr::parse("G1", "Cm").unwrap());
        assert_eq!(pz.zeros[0].plane, Plane::Lhp);
        assert_eq!(h.len(), 2);
        let lhp = &h[0];
        assert_eq!(lhp.rule, RULE_ZERO_LHP);
        assert_eq!((lhp.lhs.num.clone(), lhp.rhs.num.clone()), (p("Gf"), p("G1")));
        assert!((lhp.factor - 1.1).abs() < 1e-15);
        let dom = &h[1];
        assert_eq!(dom.rule, RULE_DOMINANCE);
        assert_eq!(dom.origin, "p2");
        assert_eq!(dom.factor, 2.0);
        assert!(dom.lhs.equivalent(&RationalExpr::parse("G2*Cm", "CL*(Cm + G2/omega_t)").unwrap()));
        assert!(dom.rhs.equivalent(&gbw));
    }

    #[test]
    fn smc_rhp_zero() {
        let (pz, h, _) = run(library::SMC);
        assert_eq!(pz.zeros[0].plane, Plane::Rhp);
        let rules: Vec<&str> = h.iter().map(|x| x.rule.as_str()).collect();
        assert_eq!(rules, [RULE_ZERO_RHP, RULE_DOMINANCE]);
        assert!(h[0].lhs.equivalent(&RationalExpr::parse("G2", "Cm").unwrap()));
        assert_eq!(h[0].factor, 10.0);
    }

    #[test]
    fn disabled_rules_emit_nothing() {
        let t = elaborate(&parse_netlist(library::MZC).unwrap()).unwrap();
        let (_, inter) = derive_transfer_function(&t).unwrap();
        let ctx = Context::from_topology(&t);
        let m = Margins::default();
        let r = Rules { dominance: false, ..Default::default() };
        let s = simplify_coefficients(&inter, &ctx, &m);
        let (pz, _) = extract_pz(&s.tf, &ctx, &m, &r).unwrap();
        let gbw = RationalExpr::new(s.tf.a(0), s.tf.b(1)).unwrap();
        let (_, h) = position_pz(&pz, &gbw, &ctx, &m, &r);
        assert!(h.iter().all(|x| x.rule != RULE_DOMINANCE));
    }
}
