//! Sizing as a smooth constrained program: maximize the figure of merit
//! subject to the specifications and every hypothesis.

mod dual;
mod solver;

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dual::Dual;
use solver::{augmented_lagrangian, AlSettings, Eval};

use crate::hypothesis::Hypothesis;
use crate::metrics::{eval_formulas, Compiled, Formula, MetricFormulas, PredictedMetrics, Scalar};
use crate::netlist::Topology;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptError {
    #[error("the problem has no free design variable")]
    NoVariables,
    #[error("variable {name} has invalid bounds [{lower}, {upper}]")]
    BadBounds { name: String, lower: f64, upper: f64 },
    #[error("symbol {0} is neither a design variable nor a constant")]
    UnknownSymbol(String),
    #[error("invalid specification: {0}")]
    BadSpec(String),
}

/// Performance targets. The optimization uses the tightened phase-margin
/// band `pm_opt_lo..pm_opt_hi`; acceptance uses `pm_lo..pm_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecSet {
    pub gain_min_db: f64,
    pub gbw_min_hz: f64,
    pub pm_lo_deg: f64,
    pub pm_hi_deg: f64,
    pub power_max_w: f64,
    pub pm_opt_lo_deg: f64,
    pub pm_opt_hi_deg: f64,
}

impl Default for SpecSet {
    fn default() -> Self {
        SpecSet {
            gain_min_db: 60.0,
            gbw_min_hz: 0.5e6,
            pm_lo_deg: 45.0,
            pm_hi_deg: 90.0,
            power_max_w: 250e-6,
            pm_opt_lo_deg: 55.0,
            pm_opt_hi_deg: 65.0,
        }
    }
}

impl SpecSet {
    pub fn validate(&self) -> Result<(), OptError> {
        let bad = |m: &str| Err(OptError::BadSpec(m.to_string()));
        if !(self.gbw_min_hz > 0.0 && self.power_max_w > 0.0) {
            return bad("gbw_min and power_max must be positive");
        }
        if !(self.pm_lo_deg <= self.pm_hi_deg && self.pm_opt_lo_deg <= self.pm_opt_hi_deg) {
            return bad("phase-margin bands must satisfy lo <= hi");
        }
        if !(self.pm_lo_deg <= self.pm_opt_lo_deg && self.pm_opt_hi_deg <= self.pm_hi_deg) {
            return bad("the optimization phase-margin band must lie inside the spec band");
        }
        Ok(())
    }

    /// Whether measured values meet the original (untightened) targets.
    pub fn met_by(&self, gain_db: f64, gbw_hz: f64, pm_deg: f64, power_w: f64) -> bool {
        gain_db >= self.gain_min_db
            && gbw_hz >= self.gbw_min_hz
            && (self.pm_lo_deg..=self.pm_hi_deg).contains(&pm_deg)
            && power_w <= self.power_max_w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptVariable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "id")]
pub enum ConstraintSource {
    Spec(String),
    Hypothesis(String),
}

/// A constraint `value(x) >= 0`, already normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub source: ConstraintSource,
    /// Human-readable relation.
    pub text: String,
    pub value: Formula,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptProblem {
    pub variables: Vec<OptVariable>,
    pub constants: BTreeMap<String, f64>,
    /// Minimized: `-log10(FoM)`.
    pub objective: Formula,
    pub constraints: Vec<Constraint>,
    /// Metric formulas behind the objective, when built from a design.
    pub formulas: Option<MetricFormulas>,
}

fn log_ratio(num: Formula, bound: f64) -> Formula {
    Formula::Sum(vec![Formula::Log10(num.boxed()), Formula::Const(-bound.log10())])
}

fn bound_ratio(bound: f64, den: Formula) -> Formula {
    Formula::Sum(vec![Formula::Const(bound.log10()), Formula::Neg(Formula::Log10(den.boxed()).boxed())])
}

/// Normalized form of a hypothesis: `log10(lhs) - log10(factor*rhs)` when both
/// sides are positive over the box, otherwise the difference scaled by the
/// magnitude of the sides at the box centre.
fn hypothesis_value(h: &Hypothesis, center: &BTreeMap<String, f64>) -> Formula {
    let lhs = Formula::rat(h.lhs.clone());
    let rhs = Formula::rat(h.rhs.clone());
    if h.log_form {
        Formula::Sum(vec![
            Formula::Log10(lhs.boxed()),
            Formula::Const(-h.factor.log10()),
            Formula::Neg(Formula::Log10(rhs.boxed()).boxed()),
        ])
    } else {
        let scale = h.lhs.try_eval(center).map(f64::abs).unwrap_or(1.0)
            + h.factor * h.rhs.try_eval(center).map(f64::abs).unwrap_or(1.0);
        let scale = if scale.is_finite() && scale > 0.0 { scale } else { 1.0 };
        Formula::Scale(
            1.0 / scale,
            Formula::Sum(vec![lhs, Formula::Neg(Formula::Scale(h.factor, rhs.boxed()).boxed())]).boxed(),
        )
    }
}

/// Objective plus spec and hypothesis constraints, in log-space variables.
pub fn build_problem(
    formulas: &MetricFormulas,
    hypotheses: &[Hypothesis],
    specs: &SpecSet,
    t: &Topology,
) -> Result<OptProblem, OptError> {
    specs.validate()?;
    let variables: Vec<OptVariable> = t
        .free_variables()
        .map(|v| OptVariable {
            name: v.name.clone(),
            lower: v.lower,
            upper: v.upper,
        })
        .collect();
    if variables.is_empty() {
        return Err(OptError::NoVariables);
    }
    for v in &variables {
        if !(v.lower > 0.0 && v.lower <= v.upper) {
            return Err(OptError::BadBounds {
                name: v.name.clone(),
                lower: v.lower,
                upper: v.upper,
            });
        }
    }
    let constants = t.constants();
    let mut center = constants.clone();
    for v in &variables {
        center.insert(v.name.clone(), (v.lower * v.upper).sqrt());
    }

    let pm = || formulas.pm_deg.clone();
    let mut constraints = vec![
        Constraint {
            name: "gain".into(),
            source: ConstraintSource::Spec("gain".into()),
            text: format!("Gain[dB] >= {}", specs.gain_min_db),
            value: log_ratio(Formula::rat(formulas.gain.clone()), 10f64.powf(specs.gain_min_db / 20.0)),
        },
        Constraint {
            name: "gbw".into(),
            source: ConstraintSource::Spec("gbw".into()),
            text: format!("GBW[Hz] >= {:e}", specs.gbw_min_hz),
            value: log_ratio(formulas.gbw_hz(), specs.gbw_min_hz),
        },
        Constraint {
            name: "pm_lo".into(),
            source: ConstraintSource::Spec("pm_lo".into()),
            text: format!("PM[deg] >= {}", specs.pm_opt_lo_deg),
            value: Formula::Scale(
                1.0 / specs.pm_opt_lo_deg.abs().max(1.0),
                Formula::Sum(vec![pm(), Formula::Const(-specs.pm_opt_lo_deg)]).boxed(),
            ),
        },
        Constraint {
            name: "pm_hi".into(),
            source: ConstraintSource::Spec("pm_hi".into()),
            text: format!("PM[deg] <= {}", specs.pm_opt_hi_deg),
            value: Formula::Scale(
                1.0 / specs.pm_opt_hi_deg.abs().max(1.0),
                Formula::Sum(vec![Formula::Const(specs.pm_opt_hi_deg), Formula::Neg(pm().boxed())]).boxed(),
            ),
        },
        Constraint {
            name: "power".into(),
            source: ConstraintSource::Spec("power".into()),
            text: format!("Power[W] <= {:e}", specs.power_max_w),
            value: bound_ratio(specs.power_max_w, formulas.power()),
        },
    ];
    for h in hypotheses {
        constraints.push(Constraint {
            name: format!("{} {}", h.id, h.origin),
            source: ConstraintSource::Hypothesis(h.id.clone()),
            text: h.relation(),
            value: hypothesis_value(h, &center),
        });
    }
    let objective = Formula::Neg(Formula::Log10(formulas.fom().boxed()).boxed());

    let known = |s: &str| variables.iter().any(|v| v.name == s) || constants.contains_key(s);
    for f in constraints.iter().map(|c| &c.value).chain([&objective]) {
        if let Some(s) = f.variables().into_iter().find(|s| !known(s)) {
            return Err(OptError::UnknownSymbol(s));
        }
    }
    Ok(OptProblem {
        variables,
        constants,
        objective,
        constraints,
        formulas: Some(formulas.clone()),
    })
}

impl OptProblem {
    /// Map unit-box coordinates to variable values.
    pub fn point(&self, z: &[f64]) -> BTreeMap<String, f64> {
        self.variables
            .iter()
            .zip(z)
            .map(|(v, &zi)| (v.name.clone(), decode(v, zi)))
            .collect()
    }

    /// Variable values plus constants.
    pub fn env(&self, x: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
        let mut env = self.constants.clone();
        env.extend(x.iter().map(|(k, v)| (k.clone(), *v)));
        env
    }

    fn encode(&self, x: &BTreeMap<String, f64>) -> Vec<f64> {
        self.variables
            .iter()
            .map(|v| {
                let val = x.get(&v.name).copied().unwrap_or((v.lower * v.upper).sqrt());
                if v.upper == v.lower {
                    0.5
                } else {
                    (val.ln() - v.lower.ln()) / (v.upper.ln() - v.lower.ln())
                }
            })
            .collect()
    }
}

impl fmt::Display for OptProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.formulas {
            Some(m) => writeln!(f, "maximize FoM = {}", m.fom())?,
            None => writeln!(f, "minimize {}", self.objective)?,
        }
        writeln!(f, "variables (log-scaled):")?;
        for v in &self.variables {
            writeln!(f, "  {} in [{:e}, {:e}]", v.name, v.lower, v.upper)?;
        }
        writeln!(f, "subject to:")?;
        for c in &self.constraints {
            writeln!(f, "  [{}] {}", c.name, c.text)?;
        }
        Ok(())
    }
}

fn decode(v: &OptVariable, z: f64) -> f64 {
    // Clamp so that bounds survive the log/exp round trip exactly.
    (v.lower.ln() + z * (v.upper.ln() - v.lower.ln())).exp().clamp(v.lower, v.upper)
}

/// Problem with symbols bound to slots: free variables first, then constants.
struct CompiledProblem {
    lower: Vec<f64>,
    width: Vec<f64>,
    constants: Vec<f64>,
    objective: Compiled,
    constraints: Vec<Compiled>,
}

impl CompiledProblem {
    fn new(p: &OptProblem) -> Self {
        let names: Vec<&String> = p.variables.iter().map(|v| &v.name).chain(p.constants.keys()).collect();
        let slot = |s: &str| names.iter().position(|n| *n == s);
        CompiledProblem {
            lower: p.variables.iter().map(|v| v.lower.ln()).collect(),
            width: p.variables.iter().map(|v| v.upper.ln() - v.lower.ln()).collect(),
            constants: p.constants.values().copied().collect(),
            objective: p.objective.compile(&slot),
            constraints: p.constraints.iter().map(|c| c.value.compile(&slot)).collect(),
        }
    }

    fn values(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let x: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(i, zi)| (self.lower[i] + zi * self.width[i]).exp())
            .chain(self.constants.iter().copied())
            .collect();
        (
            self.objective.eval(&x),
            self.constraints.iter().map(|c| c.eval(&x)).collect(),
        )
    }

    fn eval(&self, z: &[f64]) -> Eval {
        let n = z.len();
        let x: Vec<Dual> = z
            .iter()
            .enumerate()
            .map(|(i, zi)| {
                let v = (self.lower[i] + zi * self.width[i]).exp();
                Dual::var(v, v * self.width[i], i, n)
            })
            .chain(self.constants.iter().map(|&c| Dual::constant(c)))
            .collect();
        let full = |d: Dual| {
            let mut g = d.g;
            g.resize(n, 0.0);
            (d.v, g)
        };
        let (f, df) = full(self.objective.eval(&x));
        let (g, dg) = self.constraints.iter().map(|c| full(c.eval(&x))).unzip();
        Eval { f, df, g, dg }
    }
}

/// Objective and constraint gradients in unit-box coordinates at `z`, for
/// verification against finite differences.
pub fn gradients(p: &OptProblem, z: &[f64]) -> (f64, Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let e = CompiledProblem::new(p).eval(z);
    (e.f, e.df, e.g, e.dg)
}

/// Objective and constraint values in unit-box coordinates.
pub fn values(p: &OptProblem, z: &[f64]) -> (f64, Vec<f64>) {
    CompiledProblem::new(p).values(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptSettings {
    pub starts: usize,
    pub seed: u64,
    pub kkt_tol: f64,
    /// Constraint violation tolerated on normalized values.
    pub feas_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for OptSettings {
    fn default() -> Self {
        OptSettings {
            starts: 16,
            seed: 0,
            kkt_tol: 1e-8,
            feas_tol: 1e-6,
            max_outer: 40,
            max_inner: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptStatus {
    FeasibleOptimum,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slack {
    pub name: String,
    pub value: f64,
    pub satisfied: bool,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub constraints: Vec<Slack>,
    /// Variables outside their bounds.
    pub box_violations: Vec<String>,
}

impl FeasibilityReport {
    pub fn feasible(&self) -> bool {
        self.box_violations.is_empty() && self.constraints.iter().all(|s| s.satisfied)
    }

    pub fn active(&self) -> Vec<String> {
        self.constraints.iter().filter(|s| s.active).map(|s| s.name.clone()).collect()
    }
}

/// Tolerances applied to normalized constraint values.
pub const SLACK_TOL: f64 = 1e-6;

/// Signed slack of every constraint at `x`, evaluated directly from the
/// formulas (independent of the solver).
pub fn feasibility_report(p: &OptProblem, x: &BTreeMap<String, f64>) -> FeasibilityReport {
    let env = p.env(x);
    let constraints = p
        .constraints
        .iter()
        .map(|c| {
            let value = c.value.try_eval(&env).unwrap_or(f64::NAN);
            Slack {
                name: c.name.clone(),
                value,
                satisfied: value >= -SLACK_TOL,
                active: value.abs() <= SLACK_TOL,
            }
        })
        .collect();
    let box_violations = p
        .variables
        .iter()
        .filter(|v| {
            x.get(&v.name)
                .is_none_or(|&val| val < v.lower * (1.0 - 1e-12) || val > v.upper * (1.0 + 1e-12))
        })
        .map(|v| v.name.clone())
        .collect();
    FeasibilityReport {
        constraints,
        box_violations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub status: OptStatus,
    pub x_star: BTreeMap<String, f64>,
    pub predicted: Option<PredictedMetrics>,
    pub objective_fom: Option<f64>,
    pub kkt_residual: Option<f64>,
    pub active_constraints: Vec<String>,
    pub starts_tried: usize,
    pub starts_feasible: usize,
    /// Index of the start that produced `x_star`.
    pub best_start: Option<usize>,
    pub slacks: Vec<Slack>,
    /// Lagrange multipliers of the non-zero constraints, by name.
    pub multipliers: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
struct Candidate {
    z: Vec<f64>,
    objective: f64,
    kkt: Option<f64>,
    multipliers: Vec<f64>,
    feasible: bool,
}

fn named_multipliers(p: &OptProblem, lambda: &[f64]) -> BTreeMap<String, f64> {
    p.constraints
        .iter()
        .zip(lambda)
        .filter(|(_, l)| **l > 0.0)
        .map(|(c, l)| (c.name.clone(), *l))
        .collect()
}

/// Latin-hypercube samples in the unit box.
pub fn latin_hypercube(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![vec![0.0; n]; count];
    for d in 0..n {
        let mut strata: Vec<usize> = (0..count).collect();
        strata.shuffle(&mut rng);
        for (k, p) in points.iter_mut().enumerate() {
            p[d] = (strata[k] as f64 + rng.random::<f64>()) / count as f64;
        }
    }
    points
}

/// Multi-start augmented Lagrangian from Latin-hypercube starts. Starts run
/// in parallel; the reduction (best objective, ties by start index) does not
/// depend on scheduling.
/// Objectives closer than this (in decades of FoM) count as the same optimum.
const OBJECTIVE_TIE: f64 = 1e-9;

pub fn solve(p: &OptProblem, settings: &OptSettings) -> OptResult {
    let cp = CompiledProblem::new(p);
    let n = p.variables.len();
    let starts = latin_hypercube(n, settings.starts.max(1), settings.seed);
    let al = AlSettings {
        kkt_tol: settings.kkt_tol,
        feas_tol: settings.feas_tol,
        max_outer: settings.max_outer,
        max_inner: settings.max_inner,
    };
    let feasible = |g: &[f64]| g.iter().all(|v| *v >= -settings.feas_tol);
    let per_start: Vec<[Candidate; 2]> = starts
        .par_iter()
        .map(|z0| {
            let (f0, g0) = cp.values(z0);
            let start = Candidate {
                z: z0.clone(),
                objective: f0,
                kkt: None,
                multipliers: Vec::new(),
                feasible: f0.is_finite() && feasible(&g0),
            };
            let out = augmented_lagrangian(&|z| cp.eval(z), z0, &al);
            let (f, g) = cp.values(&out.z);
            let end = Candidate {
                objective: f,
                kkt: Some(out.kkt),
                multipliers: out.multipliers,
                feasible: f.is_finite() && feasible(&g),
                z: out.z,
            };
            [end, start]
        })
        .collect();

    let starts_feasible = per_start.iter().filter(|c| c[0].feasible).count();
    let best = per_start
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.iter().map(move |c| (i, c)))
        .filter(|(_, c)| c.feasible)
        .fold(None::<(usize, &Candidate)>, |acc, (i, c)| match acc {
            // Equal objectives (several starts reach the same optimum) go to
            // the better converged point.
            Some((_, b)) if (b.objective - c.objective).abs() <= OBJECTIVE_TIE => {
                let (kb, kc) = (b.kkt.unwrap_or(f64::INFINITY), c.kkt.unwrap_or(f64::INFINITY));
                if kc < kb { Some((i, c)) } else { acc }
            }
            Some((_, b)) if b.objective <= c.objective => acc,
            _ => Some((i, c)),
        });
    let Some((idx, best)) = best else {
        // Report the least-violating end point for diagnosis.
        let (idx, c) = per_start
            .iter()
            .enumerate()
            .map(|(i, c)| (i, &c[0]))
            .min_by(|a, b| {
                let va = violation_of(&cp, &a.1.z);
                let vb = violation_of(&cp, &b.1.z);
                va.total_cmp(&vb)
            })
            .expect("at least one start");
        let x = p.point(&c.z);
        let report = feasibility_report(p, &x);
        return OptResult {
            status: OptStatus::Infeasible,
            predicted: p.formulas.as_ref().map(|m| eval_formulas(m, &p.env(&x))),
            objective_fom: None,
            kkt_residual: c.kkt,
            active_constraints: report.active(),
            starts_tried: starts.len(),
            starts_feasible: 0,
            best_start: Some(idx),
            slacks: report.constraints,
            multipliers: named_multipliers(p, &c.multipliers),
            x_star: x,
        };
    };
    let x = p.point(&best.z);
    let report = feasibility_report(p, &x);
    let converged = best.kkt.is_some_and(|k| k <= settings.kkt_tol);
    OptResult {
        status: if converged { OptStatus::FeasibleOptimum } else { OptStatus::MaxIter },
        predicted: p.formulas.as_ref().map(|m| eval_formulas(m, &p.env(&x))),
        objective_fom: Some(10f64.powf(-best.objective)),
        kkt_residual: best.kkt,
        active_constraints: report.active(),
        starts_tried: starts.len(),
        starts_feasible,
        best_start: Some(idx),
        slacks: report.constraints,
        multipliers: named_multipliers(p, &best.multipliers),
        x_star: x,
    }
}

fn violation_of(cp: &CompiledProblem, z: &[f64]) -> f64 {
    cp.values(z).1.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max)
}

/// Unit-box coordinates of a design point (for warm starts and tests).
pub fn encode(p: &OptProblem, x: &BTreeMap<String, f64>) -> Vec<f64> {
    p.encode(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::propose;
    use crate::hypothesis::{Margins, Rules};
    use crate::library;
    use crate::netlist::{elaborate, parse_netlist};
    use crate::symbolic::{Poly, RationalExpr};

    fn mzc_problem(rules: &Rules) -> OptProblem {
        let t = elaborate(&parse_netlist(library::MZC).unwrap()).unwrap();
        let p = propose(&t, &Margins::default(), rules).unwrap();
        build_problem(&p.formulas, &p.hypotheses, &SpecSet::default(), &t).unwrap()
    }

    #[test]
    fn monotone_objective_hits_lower_corner() {
        // maximize 1/(xy) on [1,10]^2 with x >= 1, y >= 1
        let var = |n: &str| OptVariable {
            name: n.into(),
            lower: 1.0,
            upper: 10.0,
        };
        let ge_one = |n: &str| Constraint {
            name: n.into(),
            source: ConstraintSource::Spec(n.into()),
            text: format!("{n} >= 1"),
            value: Formula::Sum(vec![Formula::poly(Poly::var(n)), Formula::Const(-1.0)]),
        };
        let p = OptProblem {
            variables: vec![var("x"), var("y")],
            constants: BTreeMap::new(),
            objective: Formula::poly(Poly::parse("x*y").unwrap()),
            constraints: vec![ge_one("x"), ge_one("y")],
            formulas: None,
        };
        let r = solve(&p, &OptSettings { starts: 4, ..Default::default() });
        assert_eq!(r.status, OptStatus::FeasibleOptimum);
        assert!((r.x_star["x"] - 1.0).abs() < 1e-6 && (r.x_star["y"] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mzc_problem_shape() {
        let p = mzc_problem(&Rules::default());
        let specs = p.constraints.iter().filter(|c| matches!(c.source, ConstraintSource::Spec(_))).count();
        assert_eq!(specs, 5);
        let names: Vec<&str> = p.variables.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, ["G1", "G2", "Gf", "A1", "A2", "Af", "Cm"]);
        assert!(p.constants.contains_key("CL") && p.constants.contains_key("RL"));
        assert!(p.to_string().contains("maximize FoM"));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = mzc_problem(&Rules::default());
        let n = p.variables.len();
        for (k, z) in latin_hypercube(n, 10, 7).iter().enumerate() {
            let (_, df, _, dg) = gradients(&p, z);
            for i in 0..n {
                let h = 1e-6;
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += h;
                zm[i] -= h;
                let (fp, gp) = values(&p, &zp);
                let (fm, gm) = values(&p, &zm);
                let check = |analytic: f64, fd: f64, what: &str| {
                    let scale = analytic.abs().max(fd.abs()).max(1e-3);
                    assert!((analytic - fd).abs() <= 1e-5 * scale, "point {k} var {i} {what}: {analytic} vs {fd}");
                };
                check(df[i], (fp - fm) / (2.0 * h), "objective");
                for j in 0..gp.len() {
                    check(dg[j][i], (gp[j] - gm[j]) / (2.0 * h), &p.constraints[j].name);
                }
            }
        }
    }

    #[test]
    fn mzc_solves_and_is_deterministic() {
        let p = mzc_problem(&Rules::default());
        let s = OptSettings { seed: 3, ..Default::default() };
        let a = solve(&p, &s);
        assert_eq!(a.status, OptStatus::FeasibleOptimum, "{a:?}");
        let report = feasibility_report(&p, &a.x_star);
        assert!(report.feasible(), "{report:?}");
        let b = solve(&p, &s);
        assert_eq!(a.x_star, b.x_star);
        // Objective is no worse than any feasible start.
        let cp = CompiledProblem::new(&p);
        for z in latin_hypercube(p.variables.len(), s.starts, s.seed) {
            let (f, g) = cp.values(&z);
            if g.iter().all(|v| *v >= -s.feas_tol) {
                assert!(10f64.powf(-f) <= a.objective_fom.unwrap() * (1.0 + 1e-12));
            }
        }
        println!("{:?} kkt={:?} fom={:?} {:?}", a.status, a.kkt_residual, a.objective_fom, a.predicted);
    }

    #[test]
    fn conflicting_specs_are_infeasible() {
        let t = elaborate(&parse_netlist(library::MZC).unwrap()).unwrap();
        let pr = propose(&t, &Margins::default(), &Rules::default()).unwrap();
        // GBW above what the box allows at the power cap.
        let specs = SpecSet {
            power_max_w: 3.0e-6,
            gbw_min_hz: 1e9,
            ..Default::default()
        };
        let p = build_problem(&pr.formulas, &pr.hypotheses, &specs, &t).unwrap();
        let r = solve(&p, &OptSettings { starts: 4, ..Default::default() });
        assert_eq!(r.status, OptStatus::Infeasible);
        assert!(!feasibility_report(&p, &r.x_star).feasible());
    }

    #[test]
    fn out_of_box_points_are_flagged() {
        let p = mzc_problem(&Rules::default());
        let mut x = p.point(&vec![0.5; p.variables.len()]);
        x.insert("Cm".into(), 1e-16);
        let r = feasibility_report(&p, &x);
        assert_eq!(r.box_violations, ["Cm"]);
    }

    #[test]
    fn spec_validation() {
        let bad = SpecSet {
            pm_opt_lo_deg: 40.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let _ = RationalExpr::from_poly(Poly::one());
    }
}
