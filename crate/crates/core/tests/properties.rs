use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use opamp_core::hypothesis::{simplify_coefficients, Context, Margins};
use opamp_core::library;
use opamp_core::netlist::{elaborate, parse_netlist, Topology};
use opamp_core::oracle::{
    ac_sweep, exact_roots, measure, poly_from_roots, unwrap_phase, NumericMna, NumericTf,
};
use opamp_core::symbolic::{build_kcl_system, derive_transfer_function};
use proptest::prelude::*;

fn topologies() -> Vec<Topology> {
    library::ALL
        .iter()
        .map(|(_, src)| elaborate(&parse_netlist(src).unwrap()).unwrap())
        .collect()
}

/// Map unit coordinates onto the log-scaled box of the free variables.
fn point(t: &Topology, unit: &[f64]) -> BTreeMap<String, f64> {
    t.free_variables()
        .zip(unit.iter().cycle())
        .map(|(v, u)| {
            let (lo, hi) = v.range();
            (v.name.clone(), lo * (hi / lo).powf(*u))
        })
        .collect()
}

fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn raw_tf_matches_nodal_solve(
        which in 0usize..4,
        unit in prop::collection::vec(0.0f64..1.0, 10),
        log_w in 0.0f64..9.0,
        damp in -1.0f64..1.0,
    ) {
        let t = &topologies()[which];
        let env = t.bind(&point(t, &unit));
        let (raw, _) = derive_transfer_function(t).unwrap();
        let mna = NumericMna::new(&build_kcl_system(t).unwrap(), &t.output_node, &env).unwrap();
        let w = 10f64.powf(log_w);
        let s = Complex64::new(damp * w, w);
        let h = raw.eval(&env, s).unwrap();
        let m = mna.solve(s).unwrap();
        prop_assert!(rel(h, m) < 1e-10, "{h} vs {m}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn roots_rebuild_the_polynomial(
        coeffs in prop::collection::vec(-1.0f64..1.0, 2..=6),
        lead in prop_oneof![0.1f64..1.0, -1.0f64..-0.1],
    ) {
        let mut c = coeffs;
        let n = c.len() - 1;
        c[n] = lead;
        let roots = exact_roots(&c).unwrap();
        prop_assert_eq!(roots.len(), n);
        let back = poly_from_roots(&roots, lead);
        let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (k, (x, y)) in c.iter().zip(&back).enumerate() {
            prop_assert!((Complex64::new(*x, 0.0) - y).norm() <= 1e-8 * scale, "coefficient {k}: {x} vs {y}");
        }
    }

    #[test]
    fn unwrapped_phase_is_continuous_and_exact(
        log_poles in prop::collection::vec(0.0f64..7.0, 1..=4),
    ) {
        let poles: Vec<f64> = log_poles.iter().map(|l| 2.0 * PI * 10f64.powf(*l)).collect();
        // prod 1/(1 + s/p)
        let den = poles.iter().fold(vec![1.0], |acc, p| {
            let mut next = vec![0.0; acc.len() + 1];
            for (k, a) in acc.iter().enumerate() {
                next[k] += a;
                next[k + 1] += a / p;
            }
            next
        });
        let h = NumericTf { num: vec![1.0], den };
        let sweep = ac_sweep(&h, 1.0, 1e9, 20).unwrap();
        let phases = unwrap_phase(&sweep.iter().map(|p| p.h).collect::<Vec<_>>(), 0.0);
        for w in phases.windows(2) {
            prop_assert!((w[1] - w[0]).abs() < 180.0);
        }
        for (pt, ph) in sweep.iter().zip(&phases) {
            let w = 2.0 * PI * pt.freq_hz;
            let exact: f64 = -poles.iter().map(|p| (w / p).atan().to_degrees()).sum::<f64>();
            prop_assert!((ph - exact).abs() < 1e-6, "{} Hz: {ph} vs {exact}", pt.freq_hz);
        }
    }

    #[test]
    fn single_pole_metrics(gain in 1e3f64..1e5, pole_hz in 1.0f64..1e4) {
        let h = NumericTf { num: vec![gain], den: vec![1.0, 1.0 / (2.0 * PI * pole_hz)] };
        let m = measure(&h, 1.0, 1e-4, 1e-11).unwrap();
        prop_assert!((m.pm_deg.unwrap() - 90.0).abs() <= 0.1);
        let gbw = gain * pole_hz;
        prop_assert!((m.gbw_hz.unwrap() - gbw).abs() <= 1e-3 * gbw);
    }

    /// Wherever a coefficient's hypotheses hold, every dropped term is at
    /// most a `1/K_dom` share of the retained part.
    #[test]
    fn simplification_is_sound_under_its_hypotheses(
        which in 0usize..4,
        unit in prop::collection::vec(0.0f64..1.0, 10),
    ) {
        let t = &topologies()[which];
        let (_, inter) = derive_transfer_function(t).unwrap();
        let margins = Margins::default();
        let s = simplify_coefficients(&inter, &Context::from_topology(t), &margins);
        let env = t.bind(&point(t, &unit));
        for r in &s.reports {
            let holds = s
                .hypotheses
                .iter()
                .filter(|h| r.hypotheses.contains(&h.id))
                .all(|h| h.holds(&env, 0.0));
            if !holds || r.dropped.is_zero() {
                continue;
            }
            let kept = r.simplified.eval(&env).abs();
            let bound = 1.0 / margins.k_dom_for(&r.label).min(margins.k_auto);
            for term in r.dropped.split_terms() {
                let v = term.eval(&env).abs();
                prop_assert!(v <= bound * kept * (1.0 + 1e-12), "{}: {} is {} of {}", r.label, term.canonical(), v / kept, r.simplified.canonical());
            }
        }
    }
}

/// The soundness property above is only meaningful if random points often
/// satisfy the hypotheses.
#[test]
fn soundness_property_is_exercised() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let margins = Margins::default();
    for t in topologies() {
        let (_, inter) = derive_transfer_function(&t).unwrap();
        let s = simplify_coefficients(&inter, &Context::from_topology(&t), &margins);
        let hypothesized: Vec<_> = s.reports.iter().filter(|r| !r.hypotheses.is_empty()).collect();
        let mut covered = 0;
        for _ in 0..200 {
            let unit: Vec<f64> = (0..10).map(|_| rng.random()).collect();
            let env = t.bind(&point(&t, &unit));
            covered += hypothesized
                .iter()
                .filter(|r| s.hypotheses.iter().filter(|h| r.hypotheses.contains(&h.id)).all(|h| h.holds(&env, 0.0)))
                .count();
        }
        assert!(hypothesized.is_empty() || covered > 0);
    }
}
