//! Exact symbolic algebra for small nodal systems.

mod det;
mod kcl;
mod parse;
mod poly;
mod rational;
mod spoly;
mod tf;

use thiserror::Error;

pub use det::{bareiss, det_bareiss, det_laplace};
pub use kcl::{build_kcl_system, KclSystem};
pub use parse::parse_decimal;
pub use poly::{rational_to_f64, Monomial, Poly, Rational};
pub use rational::RationalExpr;
pub use spoly::{horner, SPoly};
pub use tf::{
    cramer_solve, derive_transfer_function, substitute_parasitics, tf_eval, TfForm,
    TransferFunction,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymbolicError {
    #[error("parse error at offset {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("symbol `{0}` has no value")]
    Unbound(String),
    #[error("cannot invert the multi-term value substituted for `{0}`")]
    NonMonomialInverse(String),
    #[error("negative power of the Laplace variable")]
    NegativeLaplacePower,
    #[error("zero denominator")]
    ZeroDenominator,
    #[error("matrix is not square")]
    NotSquare,
    #[error("non-exact division during elimination")]
    InexactDivision,
    #[error("topology must be elaborated first")]
    NotElaborated,
    #[error("node `{0}` has no admittance to anything")]
    StructurallySingular(String),
    #[error("nodal matrix is singular")]
    SingularSystem,
    #[error("node `{0}` is not an unknown of the system")]
    UnknownNode(String),
    #[error("evaluation hit a pole")]
    PoleHit,
}
