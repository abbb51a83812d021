//! The propose, optimize, verify and repair loop.

mod propose;
mod run;

use thiserror::Error;

pub use propose::{propose, propose_from, Proposal};
pub use run::{
    attribute_error, check_result, propose_fix, run_design, Attribution, AttributionInput, Criteria,
    DesignConfig, DesignState, FixAction, FixKind, HypothesisRow, IterationRecord, MetricCheck, Rollback,
    Tolerances, Verdict, VerdictStatus, PM_WIDEN_DEG, RELAX_FLOOR, REPORT_SCHEMA,
};

use crate::hypothesis::HypothesisError;
use crate::metrics::MetricsError;
use crate::netlist::NetlistError;
use crate::symbolic::SymbolicError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error(transparent)]
    Hypothesis(#[from] HypothesisError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
