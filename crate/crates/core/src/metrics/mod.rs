//! Closed-form performance formulas assembled from the simplified transfer
//! function and the positioned pole/zero model.

pub mod expr;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use expr::{Compiled, Formula, Scalar};

use crate::hypothesis::{rational_interval, Bounds, Plane, PzModel, Sign};
use crate::netlist::Topology;
use crate::symbolic::{parse_decimal, Poly, RationalExpr, TransferFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("the denominator has no constant term, so DC gain is undefined")]
    ZeroDcDenominator,
    #[error("the numerator has no constant term, so DC gain is zero")]
    ZeroDcGain,
    #[error("the sign of the DC gain changes over the design box")]
    GainSignAmbiguous,
    #[error("no real dominant pole: all poles form complex pairs")]
    NoDominantPole,
    #[error("zero {0} lies in an undetermined half-plane; positioning must run first")]
    UnresolvedZero(String),
    #[error("topology has no load capacitor at the output")]
    NoLoadCapacitor,
}

/// Symbolic performance model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricFormulas {
    /// DC gain magnitude (linear, V/V).
    pub gain: RationalExpr,
    /// Unity-gain angular frequency `gain * |p1|` (rad/s).
    pub gbw_rad: RationalExpr,
    /// Phase margin in degrees, built on `gbw_rad`.
    pub pm_deg: Formula,
    /// Static power in watts.
    pub power_w: Poly,
    /// Load capacitance in farads.
    pub load_cap: Poly,
}

/// Numeric metric values at a design point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedMetrics {
    pub gain_db: f64,
    pub gbw_hz: f64,
    pub pm_deg: f64,
    pub power_w: f64,
    pub fom: f64,
}

/// Unit factors of the figure of merit `GBW[MHz] * C_L[pF] / Power[mW]`.
pub const FOM_HZ_TO_MHZ: f64 = 1e-6;
pub const FOM_F_TO_PF: f64 = 1e12;
pub const FOM_W_TO_MW: f64 = 1e3;

impl MetricFormulas {
    pub fn gain_db(&self) -> Formula {
        Formula::Scale(20.0, Formula::Log10(Formula::rat(self.gain.clone()).boxed()).boxed())
    }

    pub fn gbw_hz(&self) -> Formula {
        Formula::Scale(1.0 / (2.0 * PI), Formula::rat(self.gbw_rad.clone()).boxed())
    }

    pub fn power(&self) -> Formula {
        Formula::poly(self.power_w.clone())
    }

    /// FoM with unit conversions folded in.
    pub fn fom(&self) -> Formula {
        fom_formula(self.gbw_hz(), Formula::poly(self.load_cap.clone()), self.power())
    }

    /// Every symbol the formulas reference.
    pub fn variables(&self) -> Vec<String> {
        let mut all: Vec<String> = [self.gain_db(), self.gbw_hz(), self.pm_deg.clone(), self.fom()]
            .iter()
            .flat_map(Formula::variables)
            .collect();
        all.sort();
        all.dedup();
        all
    }
}

pub fn fom_formula(gbw_hz: Formula, load_cap: Formula, power_w: Formula) -> Formula {
    Formula::Div(
        Formula::Mul(gbw_hz.boxed(), load_cap.boxed()).boxed(),
        power_w.boxed(),
    )
    .scaled(FOM_HZ_TO_MHZ * FOM_F_TO_PF / FOM_W_TO_MW)
}

impl Formula {
    fn scaled(self, k: f64) -> Formula {
        Formula::Scale(k, self.boxed())
    }
}

/// Numeric figure of merit.
pub fn fom(gbw_hz: f64, load_cap_f: f64, power_w: f64) -> f64 {
    (gbw_hz * FOM_HZ_TO_MHZ) * (load_cap_f * FOM_F_TO_PF) / (power_w * FOM_W_TO_MW)
}

/// DC gain magnitude `|a0 / b0|`, with the sign fixed from the design box.
pub fn derive_gain(tf: &TransferFunction, bounds: &Bounds) -> Result<RationalExpr, MetricsError> {
    let b0 = tf.b(0);
    if b0.is_zero() {
        return Err(MetricsError::ZeroDcDenominator);
    }
    let a0 = tf.a(0);
    if a0.is_zero() {
        return Err(MetricsError::ZeroDcGain);
    }
    let g = RationalExpr::new(a0, b0).map_err(|_| MetricsError::ZeroDcDenominator)?;
    match rational_interval(&g, bounds).sign() {
        Sign::Positive => Ok(g),
        Sign::Negative => Ok(g.neg()),
        _ => Err(MetricsError::GainSignAmbiguous),
    }
}

/// `gain * |p1|` in rad/s, algebraically reduced.
pub fn derive_gbw(gain: &RationalExpr, pz: &PzModel) -> Result<RationalExpr, MetricsError> {
    let p1 = pz
        .dominant_pole()
        .and_then(|p| p.magnitude())
        .ok_or(MetricsError::NoDominantPole)?;
    Ok(gain.mul(&p1))
}

/// Phase margin: the dominant pole contributes the baseline 90 degrees;
/// other poles and right half-plane zeros subtract, left half-plane zeros add.
pub fn derive_pm(pz: &PzModel, gbw_rad: &RationalExpr) -> Result<Formula, MetricsError> {
    let w = || Formula::rat(gbw_rad.clone());
    let atan_over = |mag: RationalExpr| Formula::AtanDeg(Formula::Div(w().boxed(), Formula::rat(mag).boxed()).boxed());
    let mut terms = vec![Formula::Const(90.0)];
    for p in pz.poles.iter().skip(1) {
        if let Some(mag) = p.magnitude() {
            let t = atan_over(mag);
            terms.push(if p.plane == Plane::Rhp { t } else { Formula::Neg(t.boxed()) });
        }
    }
    for z in &pz.zeros {
        let mag = z.magnitude().ok_or_else(|| MetricsError::UnresolvedZero(z.label.clone()))?;
        let t = atan_over(mag);
        terms.push(if z.plane == Plane::Lhp { t } else { Formula::Neg(t.boxed()) });
    }
    let pair = |p: &crate::hypothesis::ComplexPair| Formula::PairPhaseDeg {
        w: w().boxed(),
        wn_sq: Formula::rat(p.omega_n_sq.clone()).boxed(),
        zeta_sq: Formula::rat(p.zeta_sq.clone()).boxed(),
    };
    for p in &pz.pole_pairs {
        let t = pair(p);
        terms.push(if p.plane == Plane::Rhp { t } else { Formula::Neg(t.boxed()) });
    }
    for z in &pz.zero_pairs {
        if z.plane == Plane::Ambiguous {
            return Err(MetricsError::UnresolvedZero(z.label.clone()));
        }
        let t = pair(z);
        terms.push(if z.plane == Plane::Lhp { t } else { Formula::Neg(t.boxed()) });
    }
    Ok(Formula::Sum(terms))
}

/// `(V_DD / (gm/I_D)) * sum of stage transconductances`.
pub fn derive_power(t: &Topology) -> Poly {
    let k = parse_decimal(&format!("{}", t.vdd / t.gm_over_id)).expect("finite decimal");
    t.stages
        .iter()
        .fold(Poly::zero(), |acc, s| acc + Poly::var(&s.gm_var))
        .scale(&k)
}

/// Sum of load capacitors at the output node.
pub fn derive_load_cap(t: &Topology) -> Result<Poly, MetricsError> {
    let caps = t.load_capacitors();
    if caps.is_empty() {
        return Err(MetricsError::NoLoadCapacitor);
    }
    Ok(caps.iter().fold(Poly::zero(), |acc, c| acc + Poly::var(&c.value_var)))
}

/// Assemble all formulas from an already positioned model.
pub fn derive_formulas(
    t: &Topology,
    pz: &PzModel,
    gain: RationalExpr,
    gbw_rad: RationalExpr,
) -> Result<MetricFormulas, MetricsError> {
    Ok(MetricFormulas {
        pm_deg: derive_pm(pz, &gbw_rad)?,
        gain,
        gbw_rad,
        power_w: derive_power(t),
        load_cap: derive_load_cap(t)?,
    })
}

/// Evaluate every formula at a complete binding.
pub fn eval_formulas(f: &MetricFormulas, env: &BTreeMap<String, f64>) -> PredictedMetrics {
    let gain = f.gain.eval(env);
    let gbw_hz = f.gbw_rad.eval(env) / (2.0 * PI);
    let power_w = f.power_w.eval(env);
    PredictedMetrics {
        gain_db: 20.0 * gain.log10(),
        gbw_hz,
        pm_deg: f.pm_deg.eval(env),
        power_w,
        fom: fom(gbw_hz, f.load_cap.eval(env), power_w),
    }
}

impl fmt::Display for MetricFormulas {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Gain (dB) = 20*log10({})", self.gain)?;
        writeln!(f, "GBW (Hz)  = ({})/(2*pi)", self.gbw_rad)?;
        writeln!(f, "PM (deg)  = {}", self.pm_deg)?;
        writeln!(f, "Power (W) = {}", self.power_w)?;
        write!(f, "FoM       = GBW[MHz]*CL[pF]/Power[mW], CL = {}", self.load_cap)
    }
}

impl fmt::Display for PredictedMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "gain {:.2} dB, GBW {:.4} MHz, PM {:.2} deg, power {:.2} uW, FoM {:.1}",
            self.gain_db,
            self.gbw_hz * 1e-6,
            self.pm_deg,
            self.power_w * 1e6,
            self.fom
        )
    }
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;

    use super::*;
    use crate::design::propose;
    use crate::hypothesis::{Margins, Rules};
    use crate::library;
    use crate::netlist::{elaborate, parse_netlist};

    fn topology(src: &str) -> Topology {
        elaborate(&parse_netlist(src).unwrap()).unwrap()
    }

    fn sample(t: &Topology) -> BTreeMap<String, f64> {
        let design: BTreeMap<String, f64> = [
            ("G1", 100e-6),
            ("G2", 200e-6),
            ("Gf", 110e-6),
            ("A1", 40.0),
            ("A2", 40.0),
            ("Af", 40.0),
            ("Cm", 1e-12),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect();
        t.bind(&design)
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        ((a - b) / b).abs() <= rel
    }

    #[test]
    fn mzc_formulas() {
        let t = topology(library::MZC);
        let p = propose(&t, &Margins::default(), &Rules::default()).unwrap();
        let f = &p.formulas;
        assert!(f.gain.equivalent(&RationalExpr::parse("G1*G2", "(G1/A1)*(G2/A2 + Gf/Af + 1/RL)").unwrap()));
        assert_eq!(f.gbw_rad, RationalExpr::parse("G1", "Cm").unwrap());
        assert_eq!(f.power_w, Poly::parse("9/100*(G1 + G2 + Gf)").unwrap());
        assert_eq!(f.load_cap, Poly::parse("CL").unwrap());
        // 90 - atan(GBW/|p2|) + atan(GBW/|z1|)
        let Formula::Sum(terms) = &f.pm_deg else { panic!("sum") };
        assert_eq!(terms.len(), 3);
        assert!(matches!(terms[1], Formula::Neg(_)));
        assert!(matches!(terms[2], Formula::AtanDeg(_)));
    }

    #[test]
    fn mzc_sample_point() {
        let t = topology(library::MZC);
        let p = propose(&t, &Margins::default(), &Rules::default()).unwrap();
        let env = sample(&t);
        let go1 = 100e-6 / 40.0;
        let go2 = 200e-6 / 40.0 + 110e-6 / 40.0 + 1.0 / 10e6;
        assert!(close(go1, 2.5e-6, 1e-12) && close(go2, 7.85e-6, 1e-12));
        let y = eval_formulas(&p.formulas, &env);
        assert!(close(10f64.powf(y.gain_db / 20.0), 1019.1, 1e-4));
        assert!((y.gain_db - 60.16).abs() < 0.005);
        assert!(close(y.gbw_hz, 15.92e6, 1e-3));
        assert!(close(y.power_w, 36.9e-6, 1e-12));
        // Independent check against the exact transfer function at 10 mHz:
        // it keeps the feedforward term G1*Gf/A1 of a0 that the formula drops.
        let h = p.raw.eval(&env, Complex64::new(0.0, 2.0 * PI * 1e-2)).unwrap();
        let kept: f64 = 1.0 + (110e-6 / 40.0) / 200e-6;
        assert!((20.0 * h.norm().log10() - y.gain_db - 20.0 * kept.log10()).abs() < 1e-6);
        assert!((20.0 * h.norm().log10() - y.gain_db).abs() < 0.15);
    }

    #[test]
    fn trivial_cases() {
        // 5/(s+1)
        let tf = TransferFunction {
            num: crate::symbolic::SPoly::constant(Poly::from_int(5)),
            den: crate::symbolic::SPoly::from_coeffs(vec![Poly::one(), Poly::one()]),
            form: crate::symbolic::TfForm::Simplified,
        };
        let g = derive_gain(&tf, &Bounds::new()).unwrap();
        assert!((20.0 * g.eval(&BTreeMap::new()).log10() - 13.979).abs() < 1e-3);
        assert!(close(fom(1e6, 10e-12, 1e-4), 100.0, 1e-12));
        // gain 1000, p1 = 2 pi 1 kHz
        assert!(close(1000.0 * 2.0 * PI * 1e3 / (2.0 * PI), 1e6, 1e-12));
    }

    #[test]
    fn pm_limits() {
        let g = Formula::Const(1.0);
        let single = Formula::Sum(vec![Formula::Const(90.0)]);
        assert_eq!(single.eval(&BTreeMap::new()), 90.0);
        let at_p2 = Formula::Sum(vec![
            Formula::Const(90.0),
            Formula::Neg(Formula::AtanDeg(Formula::Div(g.clone().boxed(), g.boxed()).boxed()).boxed()),
        ]);
        assert!((at_p2.eval(&BTreeMap::new()) - 45.0).abs() < 1e-12);
    }

    #[test]
    fn lower_bound_power() {
        let t = topology(library::NMC);
        let power = derive_power(&t);
        let env: BTreeMap<String, f64> = ["G1", "G2", "G3"].iter().map(|k| (k.to_string(), 10e-6)).collect();
        assert!(close(power.eval(&env), 2.7e-6, 1e-12));
    }

    #[test]
    fn pm_decreases_with_gbw() {
        // Pole and zero expressions fixed, unity-gain frequency a free symbol.
        // Poles and right half-plane zeros only lose phase as it grows.
        let t = topology(library::SMC);
        let p = propose(&t, &Margins::default(), &Rules::default()).unwrap();
        let pm = derive_pm(&p.pz, &RationalExpr::from_poly(Poly::var("W"))).unwrap();
        let mut env = sample(&t);
        let mut last = f64::INFINITY;
        for k in 1..200 {
            env.insert("W".into(), 1e5 * 1.1f64.powi(k));
            let v = pm.eval(&env);
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn lhp_zero_lead_is_bounded() {
        // With a left half-plane zero the phase stops falling once
        // W^2 > |z||p2|; below that the formula is still decreasing.
        let t = topology(library::MZC);
        let p = propose(&t, &Margins::default(), &Rules::default()).unwrap();
        let pm = derive_pm(&p.pz, &RationalExpr::from_poly(Poly::var("W"))).unwrap();
        let mut env = sample(&t);
        let z = p.pz.zeros[0].magnitude().unwrap().eval(&env);
        let p2 = p.pz.poles[1].magnitude().unwrap().eval(&env);
        let turn = (z * p2).sqrt();
        let mut last = f64::INFINITY;
        for k in 1..100 {
            let w = turn * 1e-4 * 1.1f64.powi(k);
            if w >= turn {
                break;
            }
            env.insert("W".into(), w);
            let v = pm.eval(&env);
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn every_formula_symbol_is_declared() {
        for (_, src) in library::ALL {
            let t = topology(src);
            let p = propose(&t, &Margins::default(), &Rules::default()).unwrap();
            let known = t.bounds();
            for v in p.formulas.variables() {
                assert!(known.contains_key(&v), "{v}");
            }
        }
    }
}
