use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::det::det_bareiss;
use super::kcl::KclSystem;
use super::poly::Poly;
use super::rational::RationalExpr;
use super::spoly::SPoly;
use super::SymbolicError;
use crate::netlist::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TfForm {
    /// Parasitics appear as their own symbols.
    Raw,
    /// Parasitics replaced by design-variable expressions.
    Intermediate,
    /// Coefficients reduced under hypotheses.
    Simplified,
}

/// `H(s) = N(s) / D(s)` with `N = sum a_k s^k`, `D = sum b_k s^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    pub num: SPoly,
    pub den: SPoly,
    pub form: TfForm,
}

impl TransferFunction {
    pub fn a(&self, k: usize) -> Poly {
        self.num.coeff(k)
    }

    pub fn b(&self, k: usize) -> Poly {
        self.den.coeff(k)
    }

    pub fn variables(&self) -> BTreeSet<String> {
        self.num
            .coeffs()
            .iter()
            .chain(self.den.coeffs())
            .flat_map(Poly::variables)
            .collect()
    }

    /// Symbolic DC gain `a_0 / b_0`.
    pub fn dc_gain(&self) -> Result<RationalExpr, SymbolicError> {
        RationalExpr::new(self.a(0), self.b(0))
    }

    pub fn eval(&self, env: &BTreeMap<String, f64>, s: Complex64) -> Result<Complex64, SymbolicError> {
        tf_eval(self, env, s)
    }

    /// Stable text form: one coefficient per line in canonical notation.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (tag, p) in [("a", &self.num), ("b", &self.den)] {
            for (k, c) in p.coeffs().iter().enumerate() {
                out.push_str(&format!("{tag}{k} = {}\n", c.canonical()));
            }
        }
        out
    }
}

impl fmt::Display for TransferFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (tag, p) in [("a", &self.num), ("b", &self.den)] {
            for (k, c) in p.coeffs().iter().enumerate() {
                writeln!(f, "{tag}_{k} = {c}")?;
            }
        }
        Ok(())
    }
}

/// Output voltage by Cramer's rule: `det(M with the output column replaced
/// by rhs) / det(M)`.
pub fn cramer_solve(sys: &KclSystem, output: &str) -> Result<TransferFunction, SymbolicError> {
    let col = sys
        .index(output)
        .ok_or_else(|| SymbolicError::UnknownNode(output.to_string()))?;
    let den = det_bareiss(&sys.matrix)?;
    if den.is_zero() {
        return Err(SymbolicError::SingularSystem);
    }
    let mut replaced = sys.matrix.clone();
    for (row, r) in replaced.iter_mut().zip(&sys.rhs) {
        row[col] = r.clone();
    }
    let num = det_bareiss(&replaced)?;
    Ok(TransferFunction {
        num,
        den,
        form: TfForm::Raw,
    })
}

/// Replace every parasitic symbol by its design-variable expression.
pub fn substitute_parasitics(
    tf: &TransferFunction,
    t: &Topology,
) -> Result<TransferFunction, SymbolicError> {
    let sub = |p: &Poly| -> Result<Poly, SymbolicError> {
        t.parasitics
            .iter()
            .try_fold(p.clone(), |acc, par| acc.substitute(&par.symbol, &par.expr))
    };
    Ok(TransferFunction {
        num: tf.num.map(sub)?,
        den: tf.den.map(sub)?,
        form: TfForm::Intermediate,
    })
}

/// Evaluate `H(s)` numerically; fails at a pole.
pub fn tf_eval(
    tf: &TransferFunction,
    env: &BTreeMap<String, f64>,
    s: Complex64,
) -> Result<Complex64, SymbolicError> {
    let n = tf.num.eval(env, s)?;
    let d = tf.den.eval(env, s)?;
    if d.norm() == 0.0 || !d.norm().is_finite() {
        return Err(SymbolicError::PoleHit);
    }
    Ok(n / d)
}

/// Raw and intermediate transfer functions of an elaborated topology.
pub fn derive_transfer_function(
    t: &Topology,
) -> Result<(TransferFunction, TransferFunction), SymbolicError> {
    let sys = super::kcl::build_kcl_system(t)?;
    let raw = cramer_solve(&sys, &t.output_node)?;
    let inter = substitute_parasitics(&raw, t)?;
    Ok((raw, inter))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library;
    use crate::netlist::{elaborate, parse_netlist};
    use crate::symbolic::det::det_laplace;
    use crate::symbolic::kcl::build_kcl_system;

    fn p(s: &str) -> Poly {
        Poly::parse(s).unwrap()
    }

    fn mzc() -> (Topology, TransferFunction, TransferFunction) {
        let t = elaborate(&parse_netlist(library::MZC).unwrap()).unwrap();
        let (raw, inter) = derive_transfer_function(&t).unwrap();
        (t, raw, inter)
    }

    #[test]
    fn mzc_intermediate_coefficients() {
        let (_, _, h) = mzc();
        assert_eq!(h.num.degree(), Some(1));
        assert_eq!(h.den.degree(), Some(2));
        assert_eq!(h.a(0), p("G1*G2 + G1*Gf/A1"));
        assert_eq!(h.a(1), p("Gf*G2/omega_t + Cm*Gf - Cm*G1"));
        assert_eq!(
            h.b(0),
            p("(G1/A1) * (G2/A2 + Gf/Af + 1/RL)")
        );
        assert_eq!(h.b(2), p("(G2/omega_t)*(CL + Cm) + CL*Cm"));
        assert_eq!(h.form, TfForm::Intermediate);
    }

    #[test]
    fn raw_has_parasitic_symbols() {
        let (_, raw, _) = mzc();
        let vars = raw.variables();
        assert!(vars.contains("Rp_g1") && vars.contains("Cp_g1"));
        assert!(!vars.contains("omega_t"));
    }

    #[test]
    fn laplace_cross_check() {
        for (name, src) in library::ALL {
            let t = elaborate(&parse_netlist(src).unwrap()).unwrap();
            let sys = build_kcl_system(&t).unwrap();
            let raw = cramer_solve(&sys, "vout").unwrap();
            assert_eq!(raw.den, det_laplace(&sys.matrix).unwrap(), "{name}");
        }
    }

    #[test]
    fn single_stage_is_first_order() {
        let t = elaborate(&parse_netlist(library::SINGLE_STAGE).unwrap()).unwrap();
        let (_, h) = derive_transfer_function(&t).unwrap();
        // -G1 / (G1/A1 + 1/RL + s*CL)
        assert_eq!(h.a(0), p("-G1"));
        assert_eq!(h.b(0), p("G1/A1 + 1/RL"));
        assert_eq!(h.b(1), p("CL"));
    }

    #[test]
    fn evaluation_at_dc() {
        let (t, raw, inter) = mzc();
        let design = BTreeMap::from([
            ("G1".to_string(), 100e-6),
            ("G2".to_string(), 500e-6),
            ("Gf".to_string(), 200e-6),
            ("A1".to_string(), 50.0),
            ("A2".to_string(), 60.0),
            ("Af".to_string(), 45.0),
            ("Cm".to_string(), 1e-12),
        ]);
        let env = t.bind(&design);
        let zero = Complex64::new(0.0, 0.0);
        let h_raw = raw.eval(&env, zero).unwrap();
        let h_int = inter.eval(&env, zero).unwrap();
        assert!((h_raw - h_int).norm() / h_int.norm() < 1e-12);
        let gain = inter.dc_gain().unwrap().eval(&env);
        assert!((gain - h_int.re).abs() / gain < 1e-12);
    }
}
