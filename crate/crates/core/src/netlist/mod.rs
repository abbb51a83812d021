//! Behavioral op-amp topologies.
//!
//! A topology is a set of transconductance stages plus passive elements. Each
//! stage is modelled as a voltage-controlled current source whose output node
//! carries a parasitic resistance `A/G` and, when it drives further stages, a
//! parasitic capacitance `sum(G_next)/omega_t`. Those parasitics are attached by
//! [`elaborate`].

mod elaborate;
mod parse;
pub mod si;
mod validate;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symbolic::Poly;

pub use elaborate::elaborate;
pub use parse::parse_netlist;
pub use validate::{validate_topology, Diagnostic, SignalPath};

/// Ground node name.
pub const GROUND: &str = "0";
/// Excitation node name.
pub const INPUT: &str = "vin";
/// Output node name.
pub const OUTPUT: &str = "vout";
/// Symbol used for the transition frequency inside expressions.
pub const OMEGA_T: &str = "omega_t";
/// Symbol reserved for the Laplace variable.
pub const LAPLACE: &str = "s";

pub const DEFAULT_OMEGA_T: f64 = 2.0 * PI * 2.0e8;
pub const DEFAULT_VDD: f64 = 1.8;
pub const DEFAULT_GM_OVER_ID: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetlistError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: duplicate {what} `{name}`")]
    Duplicate {
        line: usize,
        what: &'static str,
        name: String,
    },
    #[error("line {line}: unknown node `{node}`")]
    UnknownNode { line: usize, node: String },
    #[error("variable `{name}` is referenced but never declared")]
    MissingVariable { name: String },
    #[error("variable `{name}` is used as {used} but declared as {declared}")]
    KindMismatch {
        name: String,
        used: VarKind,
        declared: VarKind,
    },
    #[error("variable `{name}`: {msg}")]
    InvalidVariable { name: String, msg: String },
    #[error("stage `{stage}` output node `{node}` is not connected to anything")]
    UnconnectedOutput { stage: String, node: String },
    #[error("nodes {nodes:?} form a loop that is not driven from the input")]
    UndrivenLoop { nodes: Vec<String> },
    #[error("node `{node}` has no path to the output")]
    DeadEnd { node: String },
    #[error("topology has no `{0}` node")]
    MissingPort(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    Transconductance,
    StageGain,
    Resistance,
    Capacitance,
}

impl VarKind {
    /// Default design range for the kind.
    pub fn default_bounds(self) -> (f64, f64) {
        match self {
            VarKind::Transconductance => (10e-6, 1e-3),
            VarKind::StageGain => (40.0, 80.0),
            VarKind::Resistance => (10.0, 1e6),
            VarKind::Capacitance => (10e-15, 10e-12),
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            VarKind::Transconductance => "gm",
            VarKind::StageGain => "gain",
            VarKind::Resistance => "res",
            VarKind::Capacitance => "cap",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        Some(match word {
            "gm" => VarKind::Transconductance,
            "gain" => VarKind::StageGain,
            "res" => VarKind::Resistance,
            "cap" => VarKind::Capacitance,
            _ => return None,
        })
    }
}

impl fmt::Display for VarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VarKind::Transconductance => "transconductance",
            VarKind::StageGain => "stage gain",
            VarKind::Resistance => "resistance",
            VarKind::Capacitance => "capacitance",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignVariable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
    pub fixed: Option<f64>,
}

impl DesignVariable {
    pub fn new(name: impl Into<String>, kind: VarKind) -> Self {
        let (lower, upper) = kind.default_bounds();
        DesignVariable {
            name: name.into(),
            kind,
            lower,
            upper,
            fixed: None,
        }
    }

    pub fn is_fixed(&self) -> bool {
        self.fixed.is_some()
    }

    /// The range the variable may take; collapses to a point when fixed.
    pub fn range(&self) -> (f64, f64) {
        match self.fixed {
            Some(v) => (v, v),
            None => (self.lower, self.upper),
        }
    }

    pub(crate) fn check(&self) -> Result<(), NetlistError> {
        let bad = |msg: String| NetlistError::InvalidVariable {
            name: self.name.clone(),
            msg,
        };
        if !(self.lower > 0.0 && self.lower <= self.upper) {
            return Err(bad(format!(
                "bounds must satisfy 0 < lower <= upper, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        if let Some(v) = self.fixed {
            if v < self.lower || v > self.upper {
                return Err(bad(format!(
                    "fixed value {v} outside [{}, {}]",
                    self.lower, self.upper
                )));
            }
        }
        Ok(())
    }
}

/// Sign of the current a stage injects into its output node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> i64 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Polarity::Positive => '+',
            Polarity::Negative => '-',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub input_node: String,
    pub output_node: String,
    pub polarity: Polarity,
    pub gm_var: String,
    pub gain_var: String,
    /// Set during elaboration: the output feeds no other stage.
    pub drives_load_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassiveKind {
    Resistor,
    Capacitor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassiveElement {
    pub name: String,
    pub kind: PassiveKind,
    pub node_a: String,
    pub node_b: String,
    pub value_var: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParasiticKind {
    Resistance,
    Capacitance,
}

/// A parasitic element attached to a stage output (to ground).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parasitic {
    pub stage: String,
    pub kind: ParasiticKind,
    pub node: String,
    /// Symbol used for this element in the raw transfer function.
    pub symbol: String,
    /// Value in terms of design variables (`A/G` or `sum(G)/omega_t`).
    pub expr: Poly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub variables: Vec<DesignVariable>,
    pub stages: Vec<Stage>,
    pub passives: Vec<PassiveElement>,
    /// Unknown node voltages, in order of first appearance.
    pub nodes: Vec<String>,
    pub input_node: String,
    pub output_node: String,
    pub parasitics: Vec<Parasitic>,
    pub omega_t: f64,
    pub vdd: f64,
    pub gm_over_id: f64,
    pub elaborated: bool,
}

impl Topology {
    pub fn variable(&self, name: &str) -> Option<&DesignVariable> {
        self.variables.iter().find(|v| v.name == name)
    }

    /// Variables the optimizer may move.
    pub fn free_variables(&self) -> impl Iterator<Item = &DesignVariable> {
        self.variables.iter().filter(|v| !v.is_fixed())
    }

    /// Symbol → value for every fixed quantity, including `omega_t`.
    pub fn constants(&self) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> = self
            .variables
            .iter()
            .filter_map(|v| v.fixed.map(|f| (v.name.clone(), f)))
            .collect();
        out.insert(OMEGA_T.to_string(), self.omega_t);
        out
    }

    /// Closed ranges of every symbol appearing in substituted expressions.
    pub fn bounds(&self) -> BTreeMap<String, (f64, f64)> {
        let mut out: BTreeMap<String, (f64, f64)> = self
            .variables
            .iter()
            .map(|v| (v.name.clone(), v.range()))
            .collect();
        out.insert(OMEGA_T.to_string(), (self.omega_t, self.omega_t));
        out
    }

    /// Complete binding for evaluating raw expressions: design values, constants
    /// and numeric parasitic values.
    pub fn bind(&self, design: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
        let mut env = self.constants();
        for (k, v) in design {
            if self.variable(k).is_some_and(|d| !d.is_fixed()) {
                env.insert(k.clone(), *v);
            }
        }
        let parasitic_values: Vec<(String, f64)> = self
            .parasitics
            .iter()
            .map(|p| (p.symbol.clone(), p.expr.eval(&env)))
            .collect();
        env.extend(parasitic_values);
        env
    }

    /// Load capacitance: capacitors between the output node and ground.
    pub fn load_capacitors(&self) -> Vec<&PassiveElement> {
        self.passives
            .iter()
            .filter(|p| {
                p.kind == PassiveKind::Capacitor
                    && ((p.node_a == self.output_node && p.node_b == GROUND)
                        || (p.node_b == self.output_node && p.node_a == GROUND))
            })
            .collect()
    }

    /// Serialize back to the line-based netlist format.
    pub fn to_netlist(&self) -> String {
        use si::format_si;
        let mut out = String::new();
        for v in &self.variables {
            out.push_str(&format!(
                "var {} kind={} min={} max={}\n",
                v.name,
                v.kind.keyword(),
                format_si(v.lower),
                format_si(v.upper)
            ));
        }
        for s in &self.stages {
            out.push_str(&format!(
                "stage {} in={} out={} gm={} sign={} gain={}\n",
                s.name,
                s.input_node,
                s.output_node,
                s.gm_var,
                s.polarity.symbol(),
                s.gain_var
            ));
        }
        for p in &self.passives {
            let word = match p.kind {
                PassiveKind::Resistor => "res",
                PassiveKind::Capacitor => "cap",
            };
            out.push_str(&format!(
                "{word} {} {} {} value={}",
                p.name, p.node_a, p.node_b, p.value_var
            ));
            if let Some(f) = self.variable(&p.value_var).and_then(|v| v.fixed) {
                out.push_str(&format!(" fixed={}", format_si(f)));
            }
            out.push('\n');
        }
        out.push_str(&format!("const omega_t={}\n", format_si(self.omega_t)));
        out.push_str(&format!("const vdd={}\n", format_si(self.vdd)));
        out.push_str(&format!("const gm_id={}\n", format_si(self.gm_over_id)));
        out
    }
}
