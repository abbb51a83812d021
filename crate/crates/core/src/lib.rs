//! Symbolic-numeric design of multi-stage op-amp topologies.
//!
//! The pipeline: parse a behavioral netlist, derive its exact transfer
//! function, simplify it under explicit dominance hypotheses, size the design
//! by constrained optimization, then check the result against an exact
//! frequency-domain evaluation and repair the hypotheses if needed.

pub mod library;
pub mod netlist;
pub mod symbolic;
pub mod hypothesis;
pub mod metrics;
pub mod design;
pub mod oracle;
pub mod optimizer;
