use serde::{Deserialize, Serialize};

use super::interval::{term_interval, Interval};
use super::{canonical_sides, Context, Hypothesis, HypothesisKind, HypothesisSpec, Margins, RULE_SIMPLIFY};
use crate::symbolic::{Monomial, Poly, RationalExpr, Rational, SPoly, TfForm, TransferFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientDecision {
    /// Zero or one term: nothing to simplify.
    Single,
    /// Terms of both signs; left exact.
    MixedSign,
    /// All terms are comparable; nothing dropped.
    KeptAll,
    /// Dropped terms are below `1/K_auto` everywhere.
    AutoDropped,
    /// Dropped under a kind-A hypothesis that holds on the whole box.
    Guaranteed,
    /// Dropped under a kind-A hypothesis imposed as a constraint.
    Constrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub label: String,
    pub exact: Poly,
    pub simplified: Poly,
    pub dropped: Poly,
    /// Range of `dropped / simplified` over the box.
    pub dropped_fraction: Option<Interval>,
    pub decision: CoefficientDecision,
    /// One per dropped term that is not negligible.
    pub hypotheses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simplification {
    pub tf: TransferFunction,
    pub hypotheses: Vec<Hypothesis>,
    pub reports: Vec<CoefficientReport>,
}

/// Reduce each coefficient of an intermediate transfer function to its
/// dominant terms. Every dropped term that is not negligible under `K_auto`
/// gets its own kind-A hypothesis `retained >= K_dom * term`.
///
/// Within a coefficient the term with the largest interval midpoint leads.
/// It is joined by: conductances that sit beside a retained conductance at
/// the same node (so output conductances stay whole), parasitic-capacitance
/// terms that can rival a compensation capacitor, and any term that is
/// never below `1/K_dom` of the retained sum. The rest is dropped.
pub fn simplify_coefficients(tf: &TransferFunction, ctx: &Context, margins: &Margins) -> Simplification {
    let mut hypotheses = Vec::new();
    let mut reports = Vec::new();
    let mut side = |poly: &SPoly, tag: char| -> SPoly {
        let coeffs = poly
            .coeffs()
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let label = format!("{tag}{k}");
                let (report, hyp) = simplify_one(c, &label, ctx, margins);
                let out = report.simplified.clone();
                reports.push(report);
                hypotheses.extend(hyp);
                out
            })
            .collect();
        SPoly::from_coeffs(coeffs)
    };
    let num = side(&tf.num, 'a');
    let den = side(&tf.den, 'b');
    Simplification {
        tf: TransferFunction {
            num,
            den,
            form: TfForm::Simplified,
        },
        hypotheses,
        reports,
    }
}

struct Term {
    poly: Poly,
    m: Monomial,
    c: Rational,
    range: Interval,
}

/// Range of `t / c` for two same-sign terms.
fn ratio(t: &Term, c: &Term, ctx: &Context) -> Interval {
    term_interval(&t.m.div(&c.m), &(&t.c / &c.c), &ctx.bounds)
}

fn simplify_one(
    p: &Poly,
    label: &str,
    ctx: &Context,
    margins: &Margins,
) -> (CoefficientReport, Vec<Hypothesis>) {
    let report = |simplified: Poly, dropped: Poly, fraction, decision, hyps: &[Hypothesis]| CoefficientReport {
        label: label.to_string(),
        exact: p.clone(),
        simplified,
        dropped,
        dropped_fraction: fraction,
        decision,
        hypotheses: hyps.iter().map(|h| h.id.clone()).collect(),
    };
    if p.len() <= 1 {
        return (report(p.clone(), Poly::zero(), None, CoefficientDecision::Single, &[]), Vec::new());
    }
    let Some(sign) = p.uniform_sign() else {
        return (report(p.clone(), Poly::zero(), None, CoefficientDecision::MixedSign, &[]), Vec::new());
    };

    let terms: Vec<Term> = p
        .split_terms()
        .into_iter()
        .map(|poly| {
            let (m, c) = poly.single_term().map(|(m, c)| (m.clone(), c.clone())).expect("single term");
            let mut range = term_interval(&m, &c, &ctx.bounds);
            if sign < 0 {
                range = range.neg();
            }
            Term { poly, m, c, range }
        })
        .collect();

    let k_dom = margins.k_dom_for(label);
    let lead = (0..terms.len())
        .max_by(|&i, &j| {
            terms[i]
                .range
                .midpoint()
                .total_cmp(&terms[j].range.midpoint())
                .then(j.cmp(&i))
        })
        .expect("non-empty");
    let mut keep = vec![false; terms.len()];
    keep[lead] = true;

    loop {
        let mut changed = false;
        for i in 0..terms.len() {
            if keep[i] {
                continue;
            }
            let c = &terms[i];
            let retained: Vec<&Term> = (0..terms.len()).filter(|&j| keep[j]).map(|j| &terms[j]).collect();
            let sibling = retained.iter().any(|t| ctx.is_sibling_ratio(&c.m.div(&t.m)));
            let parasitic = retained.iter().any(|t| {
                ctx.is_parasitic_cap_ratio(&c.m.div(&t.m)) && ratio(c, t, ctx).hi > 1.0 / k_dom
            });
            // Smallest possible c / R.
            let floor = 1.0 / retained.iter().map(|t| ratio(t, c, ctx).hi).sum::<f64>();
            if sibling || parasitic || floor >= 1.0 / k_dom {
                keep[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let (kept, dropped): (Vec<&Term>, Vec<&Term>) = {
        let mut k = Vec::new();
        let mut d = Vec::new();
        for (i, t) in terms.iter().enumerate() {
            if keep[i] {
                k.push(t);
            } else {
                d.push(t);
            }
        }
        (k, d)
    };
    let kept_poly = kept.iter().fold(Poly::zero(), |acc, t| acc + t.poly.clone());
    if dropped.is_empty() {
        return (report(kept_poly, Poly::zero(), None, CoefficientDecision::KeptAll, &[]), Vec::new());
    }
    let dropped_poly = dropped.iter().fold(Poly::zero(), |acc, t| acc + t.poly.clone());

    // D/R = sum_c 1 / (sum_t t/c): bounding each t/c separately keeps shared
    // variables cancelled.
    let hi: f64 = dropped
        .iter()
        .map(|c| 1.0 / kept.iter().map(|t| ratio(t, c, ctx).lo).sum::<f64>())
        .sum();
    let lo: f64 = dropped
        .iter()
        .map(|c| 1.0 / kept.iter().map(|t| ratio(t, c, ctx).hi).sum::<f64>())
        .sum();
    let fraction = Interval::new(lo, hi);

    let decision = if hi <= 1.0 / margins.k_auto {
        CoefficientDecision::AutoDropped
    } else if hi <= 1.0 / k_dom {
        CoefficientDecision::Guaranteed
    } else if lo <= 1.0 / k_dom {
        CoefficientDecision::Constrained
    } else {
        CoefficientDecision::KeptAll
    };
    match decision {
        CoefficientDecision::AutoDropped => (
            report(kept_poly, dropped_poly, Some(fraction), decision, &[]),
            Vec::new(),
        ),
        CoefficientDecision::KeptAll => (
            report(p.clone(), Poly::zero(), Some(fraction), decision, &[]),
            Vec::new(),
        ),
        _ => {
            let retained = if sign < 0 { -&kept_poly } else { kept_poly.clone() };
            let mut hyps = Vec::new();
            for c in &dropped {
                let share = Interval::new(
                    1.0 / kept.iter().map(|t| ratio(t, c, ctx).hi).sum::<f64>(),
                    1.0 / kept.iter().map(|t| ratio(t, c, ctx).lo).sum::<f64>(),
                );
                if share.hi <= 1.0 / margins.k_auto {
                    continue;
                }
                let term = if sign < 0 { -&c.poly } else { c.poly.clone() };
                let (l, r) = canonical_sides(&retained, &term);
                let guaranteed = share.hi <= 1.0 / k_dom;
                let justification = format!(
                    "{label}: dropped term {} is {} of the retained sum over the box; {}",
                    c.poly,
                    share,
                    if guaranteed {
                        format!("never above 1/{k_dom}, holds everywhere")
                    } else {
                        format!("can exceed 1/{k_dom}, imposed as a constraint")
                    }
                );
                let mut h = Hypothesis::build(
                    HypothesisSpec {
                        kind: HypothesisKind::A,
                        rule: RULE_SIMPLIFY,
                        origin: label,
                        lhs: RationalExpr::from_poly(l),
                        rhs: RationalExpr::from_poly(r),
                        margin: k_dom,
                        factor_coeff: 1.0,
                        margin_exp: 1,
                        justification,
                    },
                    &ctx.bounds,
                );
                h.evidence.ratio = share;
                h.guaranteed = guaranteed;
                hyps.push(h);
            }
            (
                report(kept_poly, dropped_poly, Some(fraction), decision, &hyps),
                hyps,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library;
    use crate::netlist::{elaborate, parse_netlist};
    use crate::symbolic::derive_transfer_function;

    fn p(s: &str) -> Poly {
        Poly::parse(s).unwrap()
    }

    fn run(src: &str) -> Simplification {
        let t = elaborate(&parse_netlist(src).unwrap()).unwrap();
        let (_, inter) = derive_transfer_function(&t).unwrap();
        simplify_coefficients(&inter, &Context::from_topology(&t), &Margins::default())
    }

    #[test]
    fn mzc_reductions() {
        let s = run(library::MZC);
        assert_eq!(s.tf.a(0), p("G1*G2"));
        assert_eq!(s.tf.a(1), p("Gf*G2/omega_t + Cm*Gf - Cm*G1"));
        assert_eq!(s.tf.b(0), p("(G1/A1)*(G2/A2 + Gf/Af + 1/RL)"));
        assert_eq!(s.tf.b(1), p("G2*Cm"));
        assert_eq!(s.tf.b(2), p("CL*(Cm + G2/omega_t)"));
    }

    #[test]
    fn mzc_a0_constraint() {
        let s = run(library::MZC);
        let h = s.hypotheses.iter().find(|h| h.origin == "a0").unwrap();
        assert_eq!(h.lhs.num, p("A1*G2"));
        assert_eq!(h.rhs.num, p("Gf"));
        assert_eq!(h.factor, 10.0);
        assert!(!h.guaranteed);
    }

    #[test]
    fn mzc_b2_guaranteed() {
        let s = run(library::MZC);
        let h = s.hypotheses.iter().find(|h| h.origin == "b2").unwrap();
        assert!(h.guaranteed);
        assert!(h.evidence.ratio.hi < 0.1);
        let r = s.reports.iter().find(|r| r.label == "b2").unwrap();
        assert_eq!(r.decision, CoefficientDecision::Guaranteed);
        assert_eq!(r.dropped, p("Cm*G2/omega_t"));
    }

    #[test]
    fn mzc_b1_keeps_miller_term() {
        let s = run(library::MZC);
        let b1: Vec<&Hypothesis> = s.hypotheses.iter().filter(|h| h.origin == "b1").collect();
        assert!(b1.iter().all(|h| h.kind == HypothesisKind::A));
        // Cm > G1*CL/(G2*A1), the load term that matters when Cm is small.
        let load = b1
            .iter()
            .find(|h| h.lhs.num == p("A1*G2*Cm") && h.rhs.num == p("G1*CL"))
            .expect("load-term hypothesis");
        assert!(!load.guaranteed);
        let r = s.reports.iter().find(|r| r.label == "b1").unwrap();
        assert_eq!(r.hypotheses.len(), b1.len());
        assert_eq!(r.dropped.len(), 8);
    }

    #[test]
    fn smc_keeps_single_terms() {
        let s = run(library::SMC);
        assert_eq!(s.tf.a(0), p("G1*G2"));
        assert_eq!(s.tf.a(1), p("-G1*Cm"));
        assert_eq!(s.tf.b(1), p("G2*Cm"));
    }
}
