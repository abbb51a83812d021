use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{propose_from, Proposal};
use crate::hypothesis::{HypothesisKind, Margins, Rules, RULE_DOMINANCE};
use crate::metrics::PredictedMetrics;
use crate::netlist::Topology;
use crate::optimizer::{build_problem, solve, OptResult, OptSettings, OptStatus, SpecSet};
use crate::oracle::{compare_pz, simulate, MeasuredMetrics, PzKind, PzMatch, Simulation};
use crate::symbolic::derive_transfer_function;

pub const REPORT_SCHEMA: &str = "opamp-design-report/1";

/// Theory-versus-oracle agreement limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub gain_db: f64,
    /// Relative GBW error.
    pub gbw_rel: f64,
    pub pm_deg: f64,
    /// Zeros at least this many times the GBW are benign.
    pub benign_zero_ratio: f64,
    /// Approximate root error that counts as a mismatch.
    pub pz_rel: f64,
    /// Hypothesis headroom below which a mismatch is blamed on it.
    pub weak_slack: f64,
    /// A non-dominant pole below this multiple of the GBW breaks the
    /// single-pole GBW formula.
    pub coupling_ratio: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            gain_db: 1.0,
            gbw_rel: 0.2,
            pm_deg: 5.0,
            benign_zero_ratio: 10.0,
            pz_rel: 0.3,
            weak_slack: 0.1,
            coupling_ratio: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    pub margins: Margins,
    pub rules: Rules,
    pub specs: SpecSet,
    pub settings: OptSettings,
    pub tolerances: Tolerances,
    pub max_iter: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            margins: Margins::default(),
            rules: Rules::default(),
            specs: SpecSet::default(),
            settings: OptSettings::default(),
            tolerances: Tolerances::default(),
            max_iter: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictStatus {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criteria {
    pub opt_feasible: bool,
    pub specs_met: bool,
    pub theory_sim_agree: bool,
}

/// One metric's spec check and theory-versus-oracle comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCheck {
    pub metric: String,
    pub predicted: Option<f64>,
    pub measured: Option<f64>,
    /// Absolute for gain and PM, relative for GBW; absent when undefined.
    pub error: Option<f64>,
    pub tolerance: Option<f64>,
    pub agrees: bool,
    pub meets_spec: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    pub criteria: Criteria,
    pub details: Vec<MetricCheck>,
}

/// Three-way acceptance: the optimization is feasible, the oracle meets the
/// original specs, and prediction agrees with the oracle.
pub fn check_result(
    opt: &OptResult,
    measured: Option<&MeasuredMetrics>,
    predicted: Option<&PredictedMetrics>,
    specs: &SpecSet,
    tol: &Tolerances,
) -> Verdict {
    let opt_feasible = opt.status != OptStatus::Infeasible;
    let m = measured;
    let p = predicted;
    let gain_m = m.map(|m| m.gain_db);
    let gbw_m = m.and_then(|m| m.gbw_hz);
    let pm_m = m.and_then(|m| m.pm_deg);
    let power_m = m.map(|m| m.power_w);
    let gain_e = gain_m.zip(p.map(|p| p.gain_db)).map(|(a, b)| (a - b).abs());
    let gbw_e = gbw_m.zip(p.map(|p| p.gbw_hz)).map(|(a, b)| (b - a).abs() / a);
    let pm_e = pm_m.zip(p.map(|p| p.pm_deg)).map(|(a, b)| (a - b).abs());
    let within = |e: Option<f64>, t: f64| e.is_some_and(|e| e <= t);
    let details = vec![
        MetricCheck {
            metric: "gain_db".into(),
            predicted: p.map(|p| p.gain_db),
            measured: gain_m,
            error: gain_e,
            tolerance: Some(tol.gain_db),
            agrees: within(gain_e, tol.gain_db),
            meets_spec: gain_m.is_some_and(|g| g >= specs.gain_min_db),
        },
        MetricCheck {
            metric: "gbw_hz".into(),
            predicted: p.map(|p| p.gbw_hz),
            measured: gbw_m,
            error: gbw_e,
            tolerance: Some(tol.gbw_rel),
            agrees: within(gbw_e, tol.gbw_rel),
            meets_spec: gbw_m.is_some_and(|g| g >= specs.gbw_min_hz),
        },
        MetricCheck {
            metric: "pm_deg".into(),
            predicted: p.map(|p| p.pm_deg),
            measured: pm_m,
            error: pm_e,
            tolerance: Some(tol.pm_deg),
            agrees: within(pm_e, tol.pm_deg),
            meets_spec: pm_m.is_some_and(|v| v >= specs.pm_lo_deg && v <= specs.pm_hi_deg),
        },
        MetricCheck {
            metric: "power_w".into(),
            predicted: p.map(|p| p.power_w),
            measured: power_m,
            // Shared closed form on both sides.
            error: None,
            tolerance: None,
            agrees: true,
            meets_spec: power_m.is_some_and(|v| v <= specs.power_max_w),
        },
    ];
    let specs_met = details.iter().all(|d| d.meets_spec);
    let theory_sim_agree = details.iter().all(|d| d.agrees);
    let criteria = Criteria {
        opt_feasible,
        specs_met,
        theory_sim_agree,
    };
    let ok = opt_feasible && specs_met && theory_sim_agree;
    Verdict {
        status: if ok { VerdictStatus::Accept } else { VerdictStatus::Reject },
        criteria,
        details,
    }
}

/// Diagnosed cause of a rejection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cause", rename_all = "snake_case")]
pub enum Attribution {
    OverConstrained,
    /// A non-dominant pole sits inside the band the single-pole GBW formula assumes clean.
    MissingCoupling { pole_hz: f64, gbw_hz: f64 },
    SeparationTooWeak {
        hypothesis: String,
        origin: String,
        root: String,
        rel_error: f64,
        slack: f64,
    },
    SimplificationViolated {
        hypothesis: String,
        coefficient: String,
        deviation: f64,
        limit: f64,
    },
    Unattributed,
}

impl Attribution {
    pub fn describe(&self) -> String {
        match self {
            Attribution::OverConstrained => "over-constrained".into(),
            Attribution::MissingCoupling { .. } => "missing PZ-GBW coupling".into(),
            Attribution::SeparationTooWeak { .. } => "separation hypothesis too weak".into(),
            Attribution::SimplificationViolated { .. } => "simplification hypothesis violated".into(),
            Attribution::Unattributed => "unattributed".into(),
        }
    }
}

/// Everything attribution looks at for one rejected iteration.
pub struct AttributionInput<'a> {
    pub opt: &'a OptResult,
    pub proposal: &'a Proposal,
    pub measured: Option<&'a MeasuredMetrics>,
    pub exact_poles: &'a [num_complex::Complex64],
    pub comparison: &'a [PzMatch],
    /// Full binding at x* (design values and constants).
    pub env: &'a BTreeMap<String, f64>,
    pub margins: &'a Margins,
    pub tolerances: &'a Tolerances,
}

/// Walk the diagnosis in fixed order and return the first cause that fits.
pub fn attribute_error(a: &AttributionInput) -> Attribution {
    if a.opt.status == OptStatus::Infeasible {
        return Attribution::OverConstrained;
    }
    let gbw_hz = a
        .measured
        .and_then(|m| m.gbw_hz)
        .or(a.opt.predicted.map(|p| p.gbw_hz));
    if let Some(gbw) = gbw_hz {
        // Exact poles are sorted by magnitude; the first is the dominant one.
        if let Some(p) = a
            .exact_poles
            .iter()
            .skip(1)
            .map(|p| p.norm() / (2.0 * PI))
            .find(|&f| f < a.tolerances.coupling_ratio * gbw)
        {
            return Attribution::MissingCoupling { pole_hz: p, gbw_hz: gbw };
        }
    }
    let gbw_rad = gbw_hz.map(|g| 2.0 * PI * g);
    for m in a.comparison {
        let (Some(label), Some(exact), Some(err)) = (&m.label, m.exact, m.rel_error) else {
            continue;
        };
        if err <= a.tolerances.pz_rel {
            continue;
        }
        if m.kind == PzKind::Zero && gbw_rad.is_some_and(|w| exact.norm() >= a.tolerances.benign_zero_ratio * w) {
            continue;
        }
        let root = label.trim_end_matches(['+', '-']);
        let enabling = a.proposal.hypotheses.iter().find(|h| {
            h.kind == HypothesisKind::B
                && a.proposal.pz.enabling.contains(&h.id)
                && h.origin.split('/').any(|o| o == root)
        });
        if let Some(h) = enabling {
            let slack = h.slack(a.env);
            if slack < a.tolerances.weak_slack {
                return Attribution::SeparationTooWeak {
                    hypothesis: h.id.clone(),
                    origin: h.origin.clone(),
                    root: label.clone(),
                    rel_error: err,
                    slack,
                };
            }
        }
    }
    for r in &a.proposal.simplification.reports {
        // Blame the tightest of the coefficient's hypotheses.
        let Some(id) = a
            .proposal
            .hypotheses
            .iter()
            .filter(|h| r.hypotheses.contains(&h.id))
            .min_by(|x, y| x.slack(a.env).total_cmp(&y.slack(a.env)))
            .map(|h| &h.id)
        else {
            continue;
        };
        let (Ok(exact), Ok(simplified)) = (r.exact.try_eval(a.env), r.simplified.try_eval(a.env)) else {
            continue;
        };
        if exact == 0.0 {
            continue;
        }
        let deviation = ((exact - simplified) / exact).abs();
        let limit = 1.0 / a.margins.k_dom_for(&r.label);
        if deviation > limit {
            return Attribution::SimplificationViolated {
                hypothesis: id.clone(),
                coefficient: r.label.clone(),
                deviation,
                limit,
            };
        }
    }
    Attribution::Unattributed
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixKind {
    AddConstraint,
    TightenMargin,
    RelaxMargin,
    WidenPmBand,
    Rederive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rollback {
    Propose,
    Optimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixAction {
    pub kind: FixKind,
    /// Rule id, margin name or hypothesis id.
    pub target: String,
    pub payload: String,
    pub rollback_to: Rollback,
}

/// Margin floor when relaxing an over-constrained problem.
pub const RELAX_FLOOR: f64 = 3.0;
/// Degrees added to each side of the PM optimization band on relaxation.
pub const PM_WIDEN_DEG: f64 = 5.0;

/// Map a diagnosis to concrete changes of `cfg`, applying them in place.
/// Returns an empty list when no rule applies.
pub fn propose_fix(attribution: &Attribution, cfg: &mut DesignConfig) -> Vec<FixAction> {
    match attribution {
        Attribution::MissingCoupling { .. } => {
            if !cfg.rules.dominance {
                cfg.rules.dominance = true;
                vec![FixAction {
                    kind: FixKind::AddConstraint,
                    target: RULE_DOMINANCE.into(),
                    payload: format!("|p_nd| >= {} * GBW", cfg.margins.kappa_p),
                    rollback_to: Rollback::Optimize,
                }]
            } else {
                cfg.margins.kappa_p *= 2.0;
                vec![FixAction {
                    kind: FixKind::TightenMargin,
                    target: "kappa_p".into(),
                    payload: format!("kappa_p = {}", cfg.margins.kappa_p),
                    rollback_to: Rollback::Optimize,
                }]
            }
        }
        Attribution::SeparationTooWeak { hypothesis, origin, .. } => {
            let k = 2.0 * cfg.margins.k_sep_for(origin);
            cfg.margins.k_sep_overrides.insert(origin.clone(), k);
            vec![FixAction {
                kind: FixKind::TightenMargin,
                target: hypothesis.clone(),
                payload: format!("K_sep[{origin}] = {k}"),
                rollback_to: Rollback::Optimize,
            }]
        }
        Attribution::SimplificationViolated {
            hypothesis, coefficient, ..
        } => {
            let k = 2.0 * cfg.margins.k_dom_for(coefficient);
            cfg.margins.k_dom_overrides.insert(coefficient.clone(), k);
            vec![FixAction {
                kind: FixKind::TightenMargin,
                target: hypothesis.clone(),
                payload: format!("K_dom[{coefficient}] = {k}"),
                rollback_to: Rollback::Propose,
            }]
        }
        Attribution::OverConstrained => {
            // Margins already at or below the floor are left alone.
            let relax = |k: f64| if k > RELAX_FLOOR { (k / 2.0).max(RELAX_FLOOR) } else { k };
            let m = &mut cfg.margins;
            m.k_dom = relax(m.k_dom);
            m.k_sep = relax(m.k_sep);
            m.kappa_z = relax(m.kappa_z);
            m.k_dom_overrides.values_mut().for_each(|k| *k = relax(*k));
            m.k_sep_overrides.values_mut().for_each(|k| *k = relax(*k));
            let s = &mut cfg.specs;
            s.pm_opt_lo_deg = (s.pm_opt_lo_deg - PM_WIDEN_DEG).max(s.pm_lo_deg);
            s.pm_opt_hi_deg = (s.pm_opt_hi_deg + PM_WIDEN_DEG).min(s.pm_hi_deg);
            vec![
                FixAction {
                    kind: FixKind::RelaxMargin,
                    target: "K_dom,K_sep,kappa_z".into(),
                    payload: format!("K_dom = {}, K_sep = {}, kappa_z = {}", m.k_dom, m.k_sep, m.kappa_z),
                    rollback_to: Rollback::Optimize,
                },
                FixAction {
                    kind: FixKind::WidenPmBand,
                    target: "pm_opt".into(),
                    payload: format!("[{}, {}] deg", s.pm_opt_lo_deg, s.pm_opt_hi_deg),
                    rollback_to: Rollback::Optimize,
                },
            ]
        }
        Attribution::Unattributed => Vec::new(),
    }
}

/// One pass through propose, optimize, simulate and check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub margins: Margins,
    pub rules: Rules,
    pub pm_opt_band: (f64, f64),
    pub simplified_tf: Option<String>,
    pub hypotheses: Vec<HypothesisRow>,
    pub formulas: Option<BTreeMap<String, String>>,
    pub problem: Option<String>,
    pub opt: Option<OptResult>,
    pub measured: Option<MeasuredMetrics>,
    pub pz_comparison: Vec<PzMatch>,
    pub verdict: Option<Verdict>,
    pub attribution: Option<Attribution>,
    pub fixes: Vec<FixAction>,
    pub rationale: String,
    pub error: Option<String>,
}

/// Hypothesis as recorded in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRow {
    pub id: String,
    pub kind: HypothesisKind,
    pub rule: String,
    pub origin: String,
    pub relation: String,
    pub margin: f64,
    pub guaranteed: bool,
    pub justification: String,
    pub evidence: crate::hypothesis::Evidence,
    /// `lhs / (factor * rhs) - 1` at x*.
    pub slack_at_x: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignState {
    pub schema: String,
    pub netlist: String,
    pub seed: u64,
    pub config: DesignConfig,
    pub raw_tf: Option<String>,
    pub intermediate_tf: Option<String>,
    pub iterations: Vec<IterationRecord>,
    pub status: VerdictStatus,
    /// Index of the accepted iteration.
    pub accepted: Option<usize>,
}

impl DesignState {
    pub fn final_iteration(&self) -> Option<&IterationRecord> {
        self.iterations.last()
    }

    pub fn x_star(&self) -> Option<&BTreeMap<String, f64>> {
        self.final_iteration().and_then(|r| r.opt.as_ref()).map(|o| &o.x_star)
    }
}

/// Run the loop until ACCEPT, an unfixable rejection, or `max_iter` passes.
/// Module errors end the run and are recorded, never raised.
pub fn run_design(t: &Topology, config: &DesignConfig, seed: u64) -> DesignState {
    let mut cfg = config.clone();
    cfg.settings.seed = seed;
    let mut state = DesignState {
        schema: REPORT_SCHEMA.into(),
        netlist: t.to_netlist(),
        seed,
        config: cfg.clone(),
        raw_tf: None,
        intermediate_tf: None,
        iterations: Vec::new(),
        status: VerdictStatus::Reject,
        accepted: None,
    };
    let (raw, intermediate) = match derive_transfer_function(t) {
        Ok(tfs) => tfs,
        Err(e) => {
            state.iterations.push(failed_record(1, &cfg, format!("derivation failed: {e}")));
            return state;
        }
    };
    state.raw_tf = Some(raw.to_string());
    state.intermediate_tf = Some(intermediate.to_string());

    for index in 1..=cfg.max_iter.max(1) {
        let mut rec = failed_record(index, &cfg, String::new());
        let proposal = match propose_from(t, raw.clone(), intermediate.clone(), &cfg.margins, &cfg.rules) {
            Ok(p) => p,
            Err(e) => {
                rec.error = Some(format!("proposal failed: {e}"));
                rec.rationale = "the analytical model could not be built".into();
                state.iterations.push(rec);
                break;
            }
        };
        rec.simplified_tf = Some(proposal.simplification.tf.to_string());
        rec.formulas = Some(formula_table(&proposal));
        let problem = match build_problem(&proposal.formulas, &proposal.hypotheses, &cfg.specs, t) {
            Ok(p) => p,
            Err(e) => {
                rec.hypotheses = hypothesis_rows(&proposal, None);
                rec.error = Some(format!("problem construction failed: {e}"));
                state.iterations.push(rec);
                break;
            }
        };
        rec.problem = Some(problem.to_string());
        let opt = solve(&problem, &cfg.settings);
        let env = t.bind(&opt.x_star);
        rec.hypotheses = hypothesis_rows(&proposal, Some(&env));

        let sim: Option<Simulation> = match simulate(t, &raw, &opt.x_star) {
            Ok(s) => Some(s),
            Err(e) => {
                rec.error = Some(format!("simulation failed: {e}"));
                None
            }
        };
        if let Some(sim) = &sim {
            let (az, ap) = proposal.pz.numeric(&env);
            rec.pz_comparison = compare_pz(&az, &ap, &sim.exact);
            rec.measured = Some(sim.measured);
        }
        let verdict = check_result(
            &opt,
            rec.measured.as_ref(),
            opt.predicted.as_ref(),
            &cfg.specs,
            &cfg.tolerances,
        );
        let accepted = verdict.status == VerdictStatus::Accept;
        rec.rationale = verdict_text(&verdict, &opt);
        rec.verdict = Some(verdict);
        if accepted {
            rec.opt = Some(opt);
            state.iterations.push(rec);
            state.status = VerdictStatus::Accept;
            state.accepted = Some(index);
            break;
        }
        let attribution = attribute_error(&AttributionInput {
            opt: &opt,
            proposal: &proposal,
            measured: rec.measured.as_ref(),
            exact_poles: sim.as_ref().map(|s| s.exact.poles.as_slice()).unwrap_or(&[]),
            comparison: &rec.pz_comparison,
            env: &env,
            margins: &cfg.margins,
            tolerances: &cfg.tolerances,
        });
        let _ = write!(rec.rationale, " Attribution: {}.", attribution.describe());
        rec.opt = Some(opt);
        let stop = index == cfg.max_iter;
        if !stop {
            rec.fixes = propose_fix(&attribution, &mut cfg);
            if rec.fixes.is_empty() {
                rec.rationale.push_str(" No fix applies; stopping.");
            } else {
                for f in &rec.fixes {
                    let _ = write!(rec.rationale, " Fix: {} {} ({}).", f.target, f.payload, rollback_name(f.rollback_to));
                }
            }
        }
        let halt = rec.fixes.is_empty();
        rec.attribution = Some(attribution);
        state.iterations.push(rec);
        if halt {
            break;
        }
    }
    state
}

fn rollback_name(r: Rollback) -> &'static str {
    match r {
        Rollback::Propose => "re-simplify",
        Rollback::Optimize => "re-optimize",
    }
}

fn failed_record(index: usize, cfg: &DesignConfig, error: String) -> IterationRecord {
    IterationRecord {
        index,
        margins: cfg.margins.clone(),
        rules: cfg.rules.clone(),
        pm_opt_band: (cfg.specs.pm_opt_lo_deg, cfg.specs.pm_opt_hi_deg),
        simplified_tf: None,
        hypotheses: Vec::new(),
        formulas: None,
        problem: None,
        opt: None,
        measured: None,
        pz_comparison: Vec::new(),
        verdict: None,
        attribution: None,
        fixes: Vec::new(),
        rationale: String::new(),
        error: (!error.is_empty()).then_some(error),
    }
}

fn formula_table(p: &Proposal) -> BTreeMap<String, String> {
    let f = &p.formulas;
    let mut out = BTreeMap::new();
    out.insert("gain".into(), f.gain.to_string());
    out.insert("gbw_rad".into(), f.gbw_rad.to_string());
    out.insert("pm_deg".into(), f.pm_deg.to_string());
    out.insert("power_w".into(), f.power_w.to_string());
    out.insert("fom".into(), f.fom().to_string());
    for r in p.pz.zeros.iter().chain(&p.pz.poles) {
        out.insert(r.label.clone(), r.root.to_string());
    }
    for c in p.pz.zero_pairs.iter().chain(&p.pz.pole_pairs) {
        out.insert(format!("{} omega_n^2", c.label), c.omega_n_sq.to_string());
        out.insert(format!("{} zeta^2", c.label), c.zeta_sq.to_string());
    }
    out
}

fn hypothesis_rows(p: &Proposal, env: Option<&BTreeMap<String, f64>>) -> Vec<HypothesisRow> {
    p.hypotheses
        .iter()
        .map(|h| HypothesisRow {
            id: h.id.clone(),
            kind: h.kind,
            rule: h.rule.clone(),
            origin: h.origin.clone(),
            relation: h.relation(),
            margin: h.margin,
            guaranteed: h.guaranteed,
            justification: h.justification.clone(),
            evidence: h.evidence.clone(),
            slack_at_x: env.map(|e| h.slack(e)).filter(|s| s.is_finite()),
        })
        .collect()
}

fn verdict_text(v: &Verdict, opt: &OptResult) -> String {
    let mut s = format!(
        "{:?}: optimization {:?}, specs {}, theory/oracle {}.",
        v.status,
        opt.status,
        if v.criteria.specs_met { "met" } else { "violated" },
        if v.criteria.theory_sim_agree { "agree" } else { "disagree" }
    );
    for d in &v.details {
        if !d.meets_spec || !d.agrees {
            let _ = write!(
                s,
                " {}: predicted {}, measured {}{}.",
                d.metric,
                fmt_opt(d.predicted),
                fmt_opt(d.measured),
                d.error.map(|e| format!(", error {e:.4}")).unwrap_or_default()
            );
        }
    }
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "n/a".into())
}
