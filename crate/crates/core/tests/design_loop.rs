use std::collections::BTreeMap;

use opamp_core::design::{
    check_result, propose_fix, run_design, Attribution, DesignConfig, FixKind, Rollback, Tolerances,
    VerdictStatus,
};
use opamp_core::library;
use opamp_core::metrics::PredictedMetrics;
use opamp_core::netlist::{elaborate, parse_netlist, Topology};
use opamp_core::optimizer::{OptResult, OptStatus, SpecSet};
use opamp_core::oracle::MeasuredMetrics;

fn mzc() -> Topology {
    elaborate(&parse_netlist(library::MZC).unwrap()).unwrap()
}

fn opt(status: OptStatus) -> OptResult {
    OptResult {
        status,
        x_star: BTreeMap::new(),
        predicted: None,
        objective_fom: None,
        kkt_residual: None,
        active_constraints: Vec::new(),
        starts_tried: 1,
        starts_feasible: 1,
        best_start: Some(0),
        slacks: Vec::new(),
        multipliers: BTreeMap::new(),
    }
}

fn predicted(gain_db: f64, gbw_mhz: f64, pm_deg: f64) -> PredictedMetrics {
    PredictedMetrics {
        gain_db,
        gbw_hz: gbw_mhz * 1e6,
        pm_deg,
        power_w: 15e-6,
        fom: 0.0,
    }
}

fn measured(gain_db: f64, gbw_mhz: f64, pm_deg: f64) -> MeasuredMetrics {
    MeasuredMetrics {
        gain_db,
        gbw_hz: Some(gbw_mhz * 1e6),
        pm_deg: Some(pm_deg),
        power_w: 15e-6,
        fom: None,
        unity_crossing_found: true,
        multiple_crossings: false,
    }
}

#[test]
fn accepted_iteration_numbers_pass_the_check() {
    let v = check_result(
        &opt(OptStatus::FeasibleOptimum),
        Some(&measured(67.24, 0.94, 67.0)),
        Some(&predicted(67.23, 1.06, 65.0)),
        &SpecSet::default(),
        &Tolerances::default(),
    );
    assert_eq!(v.status, VerdictStatus::Accept);
    let gbw = v.details.iter().find(|d| d.metric == "gbw_hz").unwrap();
    assert!((gbw.error.unwrap() - 0.1277).abs() < 1e-3);
}

#[test]
fn collapsed_gbw_is_rejected() {
    let v = check_result(
        &opt(OptStatus::FeasibleOptimum),
        Some(&measured(69.27, 8.5, 6.1)),
        Some(&predicted(69.26, 377.6, 64.4)),
        &SpecSet::default(),
        &Tolerances::default(),
    );
    assert_eq!(v.status, VerdictStatus::Reject);
    assert!(v.criteria.opt_feasible);
    assert!(!v.criteria.specs_met && !v.criteria.theory_sim_agree);
}

#[test]
fn infeasible_optimization_is_rejected_even_when_metrics_agree() {
    let v = check_result(
        &opt(OptStatus::Infeasible),
        Some(&measured(67.0, 1.0, 60.0)),
        Some(&predicted(67.0, 1.0, 60.0)),
        &SpecSet::default(),
        &Tolerances::default(),
    );
    assert_eq!(v.status, VerdictStatus::Reject);
    assert!(!v.criteria.opt_feasible && v.criteria.specs_met && v.criteria.theory_sim_agree);
}

#[test]
fn spec_check_uses_the_original_pm_band() {
    // 70 degrees is outside the optimization band but inside the spec band.
    let v = check_result(
        &opt(OptStatus::FeasibleOptimum),
        Some(&measured(67.0, 1.0, 70.0)),
        Some(&predicted(67.0, 1.0, 66.0)),
        &SpecSet::default(),
        &Tolerances::default(),
    );
    assert_eq!(v.status, VerdictStatus::Accept);
}

#[test]
fn fixes_map_diagnoses_to_margin_changes() {
    let mut cfg = DesignConfig::default();
    cfg.rules.dominance = false;
    let coupling = Attribution::MissingCoupling { pole_hz: 4.6e5, gbw_hz: 8.5e6 };
    let f = propose_fix(&coupling, &mut cfg);
    assert!(cfg.rules.dominance);
    assert_eq!((f[0].kind, f[0].rollback_to), (FixKind::AddConstraint, Rollback::Optimize));
    // Already enabled: the margin is doubled instead.
    propose_fix(&coupling, &mut cfg);
    assert_eq!(cfg.margins.kappa_p, 4.0);

    let sep = Attribution::SeparationTooWeak {
        hypothesis: "B-x".into(),
        origin: "p1/p2".into(),
        root: "p2".into(),
        rel_error: 0.5,
        slack: 0.01,
    };
    let f = propose_fix(&sep, &mut cfg);
    assert_eq!(cfg.margins.k_sep_for("p1/p2"), 20.0);
    assert_eq!(cfg.margins.k_sep, 10.0);
    assert_eq!((f[0].kind, f[0].rollback_to), (FixKind::TightenMargin, Rollback::Optimize));

    let simp = Attribution::SimplificationViolated {
        hypothesis: "A-x".into(),
        coefficient: "b1".into(),
        deviation: 0.3,
        limit: 0.1,
    };
    let f = propose_fix(&simp, &mut cfg);
    assert_eq!(cfg.margins.k_dom_for("b1"), 20.0);
    assert_eq!(f[0].rollback_to, Rollback::Propose);

    assert!(propose_fix(&Attribution::Unattributed, &mut cfg).is_empty());
}

#[test]
fn relaxation_halves_margins_down_to_the_floor() {
    let mut cfg = DesignConfig::default();
    let steps = [(5.0, (50.0, 70.0)), (3.0, (45.0, 75.0)), (3.0, (45.0, 80.0))];
    for (k, band) in steps {
        propose_fix(&Attribution::OverConstrained, &mut cfg);
        assert_eq!((cfg.margins.k_dom, cfg.margins.k_sep, cfg.margins.kappa_z), (k, k, k));
        assert_eq!((cfg.specs.pm_opt_lo_deg, cfg.specs.pm_opt_hi_deg), band);
    }
    // Margins already below the floor are not raised.
    assert_eq!(cfg.margins.kappa_p, 2.0);
}

#[test]
fn impossible_spec_ends_over_constrained() {
    let mut cfg = DesignConfig::default();
    cfg.specs.gain_min_db = 200.0;
    let state = run_design(&mzc(), &cfg, 0);
    assert_eq!(state.status, VerdictStatus::Reject);
    assert_eq!(state.iterations.len(), 3);
    for it in &state.iterations {
        assert_eq!(it.opt.as_ref().unwrap().status, OptStatus::Infeasible);
        assert_eq!(it.attribution, Some(Attribution::OverConstrained));
    }
    let last = state.final_iteration().unwrap();
    assert_eq!(last.pm_opt_band, (45.0, 75.0));
}

#[test]
fn same_seed_gives_identical_state() {
    let cfg = DesignConfig::default();
    let a = run_design(&mzc(), &cfg, 3);
    let b = run_design(&mzc(), &cfg, 3);
    let (xa, xb) = (a.x_star().unwrap(), b.x_star().unwrap());
    for (k, v) in xa {
        assert_eq!(v.to_bits(), xb[k].to_bits(), "{k}");
    }
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn accepted_state_satisfies_all_three_criteria() {
    let state = run_design(&mzc(), &DesignConfig::default(), 1);
    assert_eq!(state.status, VerdictStatus::Accept);
    let it = state.final_iteration().unwrap();
    assert_eq!(state.accepted, Some(it.index));
    let v = it.verdict.as_ref().unwrap();
    assert!(v.criteria.opt_feasible && v.criteria.specs_met && v.criteria.theory_sim_agree);
    assert!(it.attribution.is_none() && it.fixes.is_empty());
    // The recorded x* reproduces the recorded verdict.
    let m = it.measured.as_ref().unwrap();
    let again = check_result(
        it.opt.as_ref().unwrap(),
        Some(m),
        it.opt.as_ref().unwrap().predicted.as_ref(),
        &state.config.specs,
        &state.config.tolerances,
    );
    assert_eq!(&again, v);
}
