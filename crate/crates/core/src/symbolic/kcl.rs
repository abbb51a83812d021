use serde::{Deserialize, Serialize};

use super::poly::{Poly, Rational};
use super::spoly::SPoly;
use super::SymbolicError;
use crate::netlist::{ParasiticKind, PassiveKind, Topology, GROUND};

/// Nodal equations `M(s) · v = rhs(s)` for a unit input voltage, written with
/// currents leaving each node counted positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KclSystem {
    pub unknowns: Vec<String>,
    pub matrix: Vec<Vec<SPoly>>,
    pub rhs: Vec<SPoly>,
}

impl KclSystem {
    pub fn index(&self, node: &str) -> Option<usize> {
        self.unknowns.iter().position(|n| n == node)
    }
}

/// Assemble the raw KCL system. Parasitics appear as their own symbols
/// (`1/Rp_x`, `s*Cp_x`); substitution happens later.
pub fn build_kcl_system(t: &Topology) -> Result<KclSystem, SymbolicError> {
    if !t.elaborated {
        return Err(SymbolicError::NotElaborated);
    }
    let n = t.nodes.len();
    let mut matrix = vec![vec![SPoly::zero(); n]; n];
    let mut rhs = vec![SPoly::zero(); n];
    let idx = |node: &str| t.nodes.iter().position(|x| x == node);

    let mut stamp = |a: &str, b: &str, y: &SPoly| {
        for (here, there) in [(a, b), (b, a)] {
            let Some(i) = idx(here) else { continue };
            matrix[i][i] = &matrix[i][i] + y;
            if let Some(j) = idx(there) {
                matrix[i][j] = &matrix[i][j] - y;
            } else if there == t.input_node {
                rhs[i] = &rhs[i] + y;
            }
        }
    };

    for p in &t.passives {
        let y = match p.kind {
            PassiveKind::Resistor => SPoly::constant(Poly::var_pow(&p.value_var, -1)),
            PassiveKind::Capacitor => SPoly::monomial(Poly::var(&p.value_var), 1),
        };
        stamp(&p.node_a, &p.node_b, &y);
    }
    for p in &t.parasitics {
        let y = match p.kind {
            ParasiticKind::Resistance => SPoly::constant(Poly::var_pow(&p.symbol, -1)),
            ParasiticKind::Capacitance => SPoly::monomial(Poly::var(&p.symbol), 1),
        };
        stamp(&p.node, GROUND, &y);
    }
    for s in &t.stages {
        let Some(out) = idx(&s.output_node) else { continue };
        let sign = Rational::from_integer(s.polarity.sign().into());
        let g = SPoly::constant(Poly::var(&s.gm_var).scale(&sign));
        if let Some(j) = idx(&s.input_node) {
            matrix[out][j] = &matrix[out][j] - &g;
        } else if s.input_node == t.input_node {
            rhs[out] = &rhs[out] + &g;
        }
    }

    if let Some(i) = matrix.iter().position(|row| row.iter().all(SPoly::is_zero)) {
        return Err(SymbolicError::StructurallySingular(t.nodes[i].clone()));
    }
    Ok(KclSystem {
        unknowns: t.nodes.clone(),
        matrix,
        rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library;
    use crate::netlist::{elaborate, parse_netlist};

    fn sp(cs: &[&str]) -> SPoly {
        SPoly::from_coeffs(cs.iter().map(|c| Poly::parse(c).unwrap()).collect())
    }

    #[test]
    fn mzc_nodal_matrix() {
        let t = elaborate(&parse_netlist(library::MZC).unwrap()).unwrap();
        let k = build_kcl_system(&t).unwrap();
        assert_eq!(k.unknowns, ["n1", "vout"]);
        assert_eq!(k.matrix[0][0], sp(&["1/Rp_g1", "Cm + Cp_g1"]));
        assert_eq!(k.matrix[0][1], sp(&["0", "-Cm"]));
        assert_eq!(k.matrix[1][0], sp(&["G2", "-Cm"]));
        assert_eq!(
            k.matrix[1][1],
            sp(&["1/RL + 1/Rp_g2 + 1/Rp_gf", "CL + Cm"])
        );
        assert_eq!(k.rhs, vec![sp(&["-G1"]), sp(&["Gf"])]);
    }

    #[test]
    fn requires_elaboration() {
        let t = parse_netlist(library::MZC).unwrap();
        assert!(matches!(
            build_kcl_system(&t),
            Err(SymbolicError::NotElaborated)
        ));
    }
}
