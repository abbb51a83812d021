use serde::{Deserialize, Serialize};

use super::DesignError;
use crate::hypothesis::{
    extract_pz, position_pz, simplify_coefficients, Context, Hypothesis, Margins, PzModel, Rules,
    Simplification,
};
use crate::metrics::{derive_formulas, derive_gain, derive_gbw, MetricFormulas};
use crate::netlist::Topology;
use crate::symbolic::{derive_transfer_function, TransferFunction};

/// Everything the analytical side produces for one set of margins and rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub raw: TransferFunction,
    pub intermediate: TransferFunction,
    pub simplification: Simplification,
    pub pz: PzModel,
    /// All hypotheses in emission order: A, then B, then C.
    pub hypotheses: Vec<Hypothesis>,
    pub formulas: MetricFormulas,
}

impl Proposal {
    pub fn hypothesis(&self, id: &str) -> Option<&Hypothesis> {
        self.hypotheses.iter().find(|h| h.id == id)
    }
}

/// Derive, simplify, factor and position, then assemble the metric formulas.
pub fn propose(t: &Topology, margins: &Margins, rules: &Rules) -> Result<Proposal, DesignError> {
    let (raw, intermediate) = derive_transfer_function(t)?;
    propose_from(t, raw, intermediate, margins, rules)
}

/// As [`propose`], reusing an already derived transfer function.
pub fn propose_from(
    t: &Topology,
    raw: TransferFunction,
    intermediate: TransferFunction,
    margins: &Margins,
    rules: &Rules,
) -> Result<Proposal, DesignError> {
    let ctx = Context::from_topology(t);
    let simplification = simplify_coefficients(&intermediate, &ctx, margins);
    let (pz, sep) = extract_pz(&simplification.tf, &ctx, margins, rules)?;
    let gain = derive_gain(&simplification.tf, &ctx.bounds)?;
    let gbw_rad = derive_gbw(&gain, &pz)?;
    let (pz, positioning) = position_pz(&pz, &gbw_rad, &ctx, margins, rules);
    let formulas = derive_formulas(t, &pz, gain, gbw_rad)?;
    let mut hypotheses = simplification.hypotheses.clone();
    hypotheses.extend(sep);
    hypotheses.extend(positioning);
    Ok(Proposal {
        raw,
        intermediate,
        simplification,
        pz,
        hypotheses,
        formulas,
    })
}
