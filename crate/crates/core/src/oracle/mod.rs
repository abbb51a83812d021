//! Numeric ground truth: exact frequency response, measured metrics and
//! exact poles and zeros of the unsimplified transfer function.

mod roots;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use roots::{complex_roots, exact_roots, poly_from_roots, residual, RootError};

use crate::metrics::{derive_load_cap, derive_power, fom, MetricsError};
use crate::netlist::Topology;
use crate::symbolic::{horner, KclSystem, SymbolicError, TransferFunction};

pub const SWEEP_LO_HZ: f64 = 1.0;
pub const SWEEP_HI_HZ: f64 = 1e11;
pub const POINTS_PER_DECADE: usize = 50;
/// Frequency at which DC gain is measured.
pub const GAIN_FREQ_HZ: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error(transparent)]
    Roots(#[from] RootError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("singular nodal matrix at s = {0}")]
    Singular(Complex64),
    #[error("invalid sweep range [{lo}, {hi}] Hz with {ppd} points per decade")]
    BadSweep { lo: f64, hi: f64, ppd: usize },
}

/// Anything that yields `H(s)` numerically.
pub trait FrequencyResponse {
    fn response(&self, s: Complex64) -> Complex64;
}

/// Transfer function with numeric coefficients, lowest power first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericTf {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl NumericTf {
    pub fn new(tf: &TransferFunction, env: &BTreeMap<String, f64>) -> Result<Self, OracleError> {
        Ok(NumericTf {
            num: tf.num.eval_coeffs(env)?,
            den: tf.den.eval_coeffs(env)?,
        })
    }

    pub fn dc_sign(&self) -> f64 {
        let n = self.num.first().copied().unwrap_or(0.0);
        let d = self.den.first().copied().unwrap_or(0.0);
        if n * d < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

impl FrequencyResponse for NumericTf {
    fn response(&self, s: Complex64) -> Complex64 {
        horner(&self.num, s) / horner(&self.den, s)
    }
}

/// Direct complex solve of the nodal equations, independent of the
/// symbolic determinant.
#[derive(Debug, Clone)]
pub struct NumericMna {
    system: KclSystem,
    output: usize,
    env: BTreeMap<String, f64>,
}

impl NumericMna {
    /// `env` must bind design variables, constants and parasitic symbols.
    pub fn new(system: &KclSystem, output: &str, env: &BTreeMap<String, f64>) -> Result<Self, OracleError> {
        let output = system
            .index(output)
            .ok_or_else(|| SymbolicError::UnknownNode(output.to_string()))?;
        Ok(NumericMna {
            system: system.clone(),
            output,
            env: env.clone(),
        })
    }

    pub fn solve(&self, s: Complex64) -> Result<Complex64, OracleError> {
        let n = self.system.unknowns.len();
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        for (i, row) in self.system.matrix.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                m[(i, j)] = e.eval(&self.env, s)?;
            }
        }
        let b: Vec<Complex64> = self
            .system
            .rhs
            .iter()
            .map(|e| e.eval(&self.env, s))
            .collect::<Result<_, _>>()?;
        let x = m
            .lu()
            .solve(&nalgebra::DVector::from_vec(b))
            .ok_or(OracleError::Singular(s))?;
        Ok(x[self.output])
    }
}

impl FrequencyResponse for NumericMna {
    fn response(&self, s: Complex64) -> Complex64 {
        self.solve(s).unwrap_or(Complex64::new(f64::NAN, f64::NAN))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub freq_hz: f64,
    pub h: Complex64,
}

impl SweepPoint {
    pub fn mag_db(&self) -> f64 {
        20.0 * self.h.norm().log10()
    }
}

/// Log-spaced frequencies from `lo` to `hi` inclusive; both endpoints exact.
pub fn log_frequencies(lo: f64, hi: f64, ppd: usize) -> Result<Vec<f64>, OracleError> {
    if !(lo > 0.0 && hi > lo && ppd > 0 && hi.is_finite()) {
        return Err(OracleError::BadSweep { lo, hi, ppd });
    }
    let decades = (hi / lo).log10();
    let steps = (decades * ppd as f64).ceil().max(1.0) as usize;
    let mut out: Vec<f64> = (0..steps)
        .map(|k| lo * 10f64.powf(decades * k as f64 / steps as f64))
        .collect();
    out.push(hi);
    Ok(out)
}

pub fn ac_sweep(h: &dyn FrequencyResponse, lo: f64, hi: f64, ppd: usize) -> Result<Vec<SweepPoint>, OracleError> {
    Ok(log_frequencies(lo, hi, ppd)?
        .into_iter()
        .map(|f| SweepPoint {
            freq_hz: f,
            h: h.response(Complex64::new(0.0, 2.0 * PI * f)),
        })
        .collect())
}

/// Unwrapped phases in degrees, continued from `start_deg` by choosing the
/// multiple of 360 nearest to the previous value.
pub fn unwrap_phase(points: &[Complex64], start_deg: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut prev = start_deg;
    for h in points {
        let raw = h.arg().to_degrees();
        let v = raw + 360.0 * ((prev - raw) / 360.0).round();
        out.push(v);
        prev = v;
    }
    out
}

/// Metrics measured from the exact response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredMetrics {
    pub gain_db: f64,
    /// Defined only when a unity crossing was found.
    pub gbw_hz: Option<f64>,
    pub pm_deg: Option<f64>,
    pub power_w: f64,
    pub fom: Option<f64>,
    pub unity_crossing_found: bool,
    /// More than one unity crossing in the sweep; the lowest is reported.
    pub multiple_crossings: bool,
}

/// Measure gain at 1 Hz, the first unity-gain crossing (log sweep then
/// bisection to 1e-6 relative) and phase margin with continuous unwrapping.
/// Power and load capacitance come from the shared closed-form expression.
pub fn measure(h: &dyn FrequencyResponse, dc_sign: f64, power_w: f64, load_cap_f: f64) -> Result<MeasuredMetrics, OracleError> {
    let sweep = ac_sweep(h, SWEEP_LO_HZ, SWEEP_HI_HZ, POINTS_PER_DECADE)?;
    let gain_db = 20.0 * h.response(Complex64::new(0.0, 2.0 * PI * GAIN_FREQ_HZ)).norm().log10();
    let reference = if dc_sign < 0.0 { 180.0 } else { 0.0 };
    let phases = unwrap_phase(&sweep.iter().map(|p| p.h).collect::<Vec<_>>(), reference);

    let crossings: Vec<usize> = (1..sweep.len())
        .filter(|&k| (sweep[k - 1].h.norm() >= 1.0) != (sweep[k].h.norm() >= 1.0))
        .collect();
    let first_down = crossings
        .iter()
        .copied()
        .find(|&k| sweep[k - 1].h.norm() >= 1.0);
    let Some(k) = first_down else {
        return Ok(MeasuredMetrics {
            gain_db,
            gbw_hz: None,
            pm_deg: None,
            power_w,
            fom: None,
            unity_crossing_found: false,
            multiple_crossings: crossings.len() > 1,
        });
    };
    let (mut lo, mut hi) = (sweep[k - 1].freq_hz.ln(), sweep[k].freq_hz.ln());
    let mag = |lf: f64| h.response(Complex64::new(0.0, 2.0 * PI * lf.exp())).norm();
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if mag(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gbw = (0.5 * (lo + hi)).exp();
    let at = h.response(Complex64::new(0.0, 2.0 * PI * gbw));
    let phase = unwrap_phase(&[at], phases[k - 1])[0];
    let pm = 180.0 + (phase - reference);
    Ok(MeasuredMetrics {
        gain_db,
        gbw_hz: Some(gbw),
        pm_deg: Some(pm),
        power_w,
        fom: Some(fom(gbw, load_cap_f, power_w)),
        unity_crossing_found: true,
        multiple_crossings: crossings.len() > 1,
    })
}

/// Exact poles and zeros, ascending magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactPz {
    pub zeros: Vec<Complex64>,
    pub poles: Vec<Complex64>,
}

pub fn exact_pz(tf: &NumericTf) -> Result<ExactPz, OracleError> {
    let roots = |c: &[f64]| -> Result<Vec<Complex64>, OracleError> {
        if c.iter().skip(1).all(|x| *x == 0.0) {
            return Ok(Vec::new());
        }
        Ok(exact_roots(c)?)
    };
    Ok(ExactPz {
        zeros: roots(&tf.num)?,
        poles: roots(&tf.den)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PzKind {
    Zero,
    Pole,
}

/// One row of the approximate-versus-exact table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PzMatch {
    pub kind: PzKind,
    pub label: Option<String>,
    pub approx: Option<Complex64>,
    pub exact: Option<Complex64>,
    /// `|approx - exact| / |exact|`.
    pub rel_error: Option<f64>,
}

impl PzMatch {
    pub fn unmatched(&self) -> bool {
        self.approx.is_none() || self.exact.is_none()
    }
}

/// Greedy matching in ascending magnitude order: each approximate root takes
/// the unused exact root nearest in log-magnitude. Leftovers on either side
/// are reported unmatched.
pub fn compare_pz(
    approx_zeros: &[(String, Complex64)],
    approx_poles: &[(String, Complex64)],
    exact: &ExactPz,
) -> Vec<PzMatch> {
    let mut out = match_kind(PzKind::Zero, approx_zeros, &exact.zeros);
    out.extend(match_kind(PzKind::Pole, approx_poles, &exact.poles));
    out
}

fn match_kind(kind: PzKind, approx: &[(String, Complex64)], exact: &[Complex64]) -> Vec<PzMatch> {
    let mut order: Vec<usize> = (0..approx.len()).collect();
    order.sort_by(|&a, &b| approx[a].1.norm().total_cmp(&approx[b].1.norm()));
    let mut used = vec![false; exact.len()];
    let mut out = Vec::new();
    let dist = |a: Complex64, e: Complex64| {
        let d = (a.norm().ln() - e.norm().ln()).abs();
        (d, (a - e).norm())
    };
    for i in order {
        let (label, a) = &approx[i];
        let best = (0..exact.len())
            .filter(|&j| !used[j])
            .min_by(|&x, &y| {
                let (dx, cx) = dist(*a, exact[x]);
                let (dy, cy) = dist(*a, exact[y]);
                dx.total_cmp(&dy).then(cx.total_cmp(&cy))
            });
        match best {
            Some(j) => {
                used[j] = true;
                out.push(PzMatch {
                    kind,
                    label: Some(label.clone()),
                    approx: Some(*a),
                    exact: Some(exact[j]),
                    rel_error: Some((a - exact[j]).norm() / exact[j].norm()),
                });
            }
            None => out.push(PzMatch {
                kind,
                label: Some(label.clone()),
                approx: Some(*a),
                exact: None,
                rel_error: None,
            }),
        }
    }
    for (j, e) in exact.iter().enumerate() {
        if !used[j] {
            out.push(PzMatch {
                kind,
                label: None,
                approx: None,
                exact: Some(*e),
                rel_error: None,
            });
        }
    }
    out
}

/// Oracle view of one design point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub tf: NumericTf,
    pub measured: MeasuredMetrics,
    pub exact: ExactPz,
}

/// Bind `design` into the raw transfer function, then measure it and find
/// its exact roots. Power uses the same closed form as the model.
pub fn simulate(t: &Topology, raw: &TransferFunction, design: &BTreeMap<String, f64>) -> Result<Simulation, OracleError> {
    let env = t.bind(design);
    let tf = NumericTf::new(raw, &env)?;
    let power = derive_power(t).try_eval(&env)?;
    let load = derive_load_cap(t)?.try_eval(&env)?;
    let measured = measure(&tf, tf.dc_sign(), power, load)?;
    let exact = exact_pz(&tf)?;
    Ok(Simulation { tf, measured, exact })
}

/// Write `freq_hz,mag_db,phase_deg` rows with phase unwrapped from the DC sign.
pub fn write_sweep_csv<W: Write>(out: W, sweep: &[SweepPoint], dc_sign: f64) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["freq_hz", "mag_db", "phase_deg"])?;
    let start = if dc_sign < 0.0 { 180.0 } else { 0.0 };
    let phases = unwrap_phase(&sweep.iter().map(|p| p.h).collect::<Vec<_>>(), start);
    for (p, ph) in sweep.iter().zip(phases) {
        w.write_record([format!("{:e}", p.freq_hz), format!("{:.9}", p.mag_db()), format!("{ph:.9}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_pole(gain: f64, pole_hz: f64) -> NumericTf {
        NumericTf {
            num: vec![gain],
            den: vec![1.0, 1.0 / (2.0 * PI * pole_hz)],
        }
    }

    #[test]
    fn minus_three_db_at_the_pole() {
        let h = single_pole(1.0, 1e3);
        let s = ac_sweep(&h, 1e3, 1e3 * (1.0 + 1e-12), 1).unwrap();
        assert!((s[0].mag_db() + 3.0103).abs() < 1e-3);
    }

    #[test]
    fn sweep_endpoints_exact() {
        let f = log_frequencies(1.0, 1e11, 50).unwrap();
        assert_eq!(f[0], 1.0);
        assert_eq!(*f.last().unwrap(), 1e11);
        assert_eq!(f.len(), 551);
        assert!(log_frequencies(10.0, 1.0, 5).is_err());
    }

    #[test]
    fn first_order_metrics() {
        let h = single_pole(1000.0, 1e3);
        let m = measure(&h, 1.0, 1e-4, 1e-11).unwrap();
        assert!(m.unity_crossing_found && !m.multiple_crossings);
        assert!((m.gain_db - 60.0).abs() < 1e-3);
        assert!((m.gbw_hz.unwrap() / 1e6 - 1.0).abs() < 1e-3);
        assert!((m.pm_deg.unwrap() - 90.0).abs() < 0.1);
    }

    #[test]
    fn inverting_reference() {
        let mut h = single_pole(1000.0, 1e3);
        h.num[0] = -1000.0;
        let m = measure(&h, h.dc_sign(), 1e-4, 1e-11).unwrap();
        assert!((m.pm_deg.unwrap() - 90.0).abs() < 0.1);
    }

    #[test]
    fn no_crossing_below_unity() {
        let h = single_pole(0.5, 1e3);
        let m = measure(&h, 1.0, 1e-4, 1e-11).unwrap();
        assert!(!m.unity_crossing_found && m.gbw_hz.is_none() && m.pm_deg.is_none());
    }

    #[test]
    fn matching_flags_leftovers() {
        let exact = ExactPz {
            zeros: vec![],
            poles: vec![Complex64::new(-1.0, 0.0), Complex64::new(-100.0, 0.0), Complex64::new(-1e4, 0.0)],
        };
        let approx = vec![("p1".to_string(), Complex64::new(-1.0, 0.0)), ("p2".to_string(), Complex64::new(-110.0, 0.0))];
        let t = compare_pz(&[], &approx, &exact);
        assert_eq!(t.len(), 3);
        assert_eq!(t[0].rel_error, Some(0.0));
        assert!((t[1].rel_error.unwrap() - 0.1).abs() < 1e-12);
        assert!(t[2].unmatched() && t[2].exact == Some(Complex64::new(-1e4, 0.0)));
    }

    #[test]
    fn csv_header_and_rows() {
        let h = single_pole(10.0, 1e3);
        let s = ac_sweep(&h, 1.0, 1e6, 2).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &s, 1.0).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "freq_hz,mag_db,phase_deg");
        assert_eq!(lines.len(), s.len() + 1);
    }
}
