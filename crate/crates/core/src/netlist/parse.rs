use std::collections::{BTreeMap, HashMap, HashSet};

use super::si::parse_si;
use super::{
    DesignVariable, NetlistError, PassiveElement, PassiveKind, Polarity, Stage, Topology, VarKind,
    DEFAULT_GM_OVER_ID, DEFAULT_OMEGA_T, DEFAULT_VDD, GROUND, INPUT, LAPLACE, OMEGA_T, OUTPUT,
};

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphanumeric() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn is_symbol_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

struct Line<'a> {
    number: usize,
    positional: Vec<&'a str>,
    keyed: BTreeMap<&'a str, &'a str>,
}

impl<'a> Line<'a> {
    fn split(number: usize, text: &'a str) -> Result<Self, NetlistError> {
        let mut positional = Vec::new();
        let mut keyed = BTreeMap::new();
        for tok in text.split_whitespace() {
            match tok.split_once('=') {
                Some((k, v)) => {
                    if k.is_empty() || v.is_empty() {
                        return Err(syntax(number, format!("malformed key=value `{tok}`")));
                    }
                    if keyed.insert(k, v).is_some() {
                        return Err(syntax(number, format!("repeated key `{k}`")));
                    }
                }
                None => {
                    if !keyed.is_empty() {
                        return Err(syntax(
                            number,
                            format!("positional token `{tok}` after key=value pairs"),
                        ));
                    }
                    positional.push(tok);
                }
            }
        }
        Ok(Line {
            number,
            positional,
            keyed,
        })
    }

    fn take(&mut self, key: &str) -> Result<&'a str, NetlistError> {
        self.keyed
            .remove(key)
            .ok_or_else(|| syntax(self.number, format!("missing `{key}=`")))
    }

    fn finish(&self) -> Result<(), NetlistError> {
        match self.keyed.keys().next() {
            Some(k) => Err(syntax(self.number, format!("unexpected key `{k}`"))),
            None => Ok(()),
        }
    }

    fn expect_positional(&self, n: usize, form: &str) -> Result<(), NetlistError> {
        if self.positional.len() != n {
            return Err(syntax(self.number, format!("expected `{form}`")));
        }
        Ok(())
    }
}

fn syntax(line: usize, msg: impl Into<String>) -> NetlistError {
    NetlistError::Syntax {
        line,
        msg: msg.into(),
    }
}

fn si_value(line: usize, key: &str, text: &str) -> Result<f64, NetlistError> {
    parse_si(text).ok_or_else(|| syntax(line, format!("bad numeric value `{key}={text}`")))
}

fn check_name(line: usize, what: &str, name: &str) -> Result<(), NetlistError> {
    if is_identifier(name) {
        Ok(())
    } else {
        Err(syntax(line, format!("invalid {what} name `{name}`")))
    }
}

/// Parse the line-based topology format. The result is not elaborated.
pub fn parse_netlist(text: &str) -> Result<Topology, NetlistError> {
    let mut declared: Vec<(DesignVariable, usize)> = Vec::new();
    let mut stages: Vec<(Stage, usize)> = Vec::new();
    let mut passives: Vec<(PassiveElement, Option<f64>, usize)> = Vec::new();
    let mut element_names: HashSet<String> = HashSet::new();
    let mut omega_t = DEFAULT_OMEGA_T;
    let mut vdd = DEFAULT_VDD;
    let mut gm_over_id = DEFAULT_GM_OVER_ID;

    for (idx, raw) in text.lines().enumerate() {
        let number = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut line = Line::split(number, body)?;
        let Some(&keyword) = line.positional.first() else {
            return Err(syntax(number, "statement keyword missing"));
        };
        match keyword {
            "stage" => {
                line.expect_positional(2, "stage <name> in=.. out=.. gm=.. sign=.. gain=..")?;
                let name = line.positional[1];
                check_name(number, "stage", name)?;
                let input_node = line.take("in")?;
                let output_node = line.take("out")?;
                let gm_var = line.take("gm")?;
                let sign = line.take("sign")?;
                let gain_var = line.take("gain")?;
                line.finish()?;
                for n in [input_node, output_node] {
                    check_name(number, "node", n)?;
                }
                for v in [gm_var, gain_var] {
                    if !is_symbol_name(v) {
                        return Err(syntax(number, format!("invalid variable name `{v}`")));
                    }
                }
                let polarity = match sign {
                    "+" => Polarity::Positive,
                    "-" => Polarity::Negative,
                    other => return Err(syntax(number, format!("sign must be + or -, got `{other}`"))),
                };
                if input_node == output_node {
                    return Err(syntax(number, "stage input and output are the same node"));
                }
                if output_node == GROUND || output_node == INPUT {
                    return Err(syntax(
                        number,
                        format!("stage output cannot be `{output_node}`"),
                    ));
                }
                if input_node == GROUND {
                    return Err(syntax(number, "stage input cannot be ground"));
                }
                if !element_names.insert(name.to_string()) {
                    return Err(NetlistError::Duplicate {
                        line: number,
                        what: "element",
                        name: name.to_string(),
                    });
                }
                stages.push((
                    Stage {
                        name: name.to_string(),
                        input_node: input_node.to_string(),
                        output_node: output_node.to_string(),
                        polarity,
                        gm_var: gm_var.to_string(),
                        gain_var: gain_var.to_string(),
                        drives_load_only: false,
                    },
                    number,
                ));
            }
            word @ ("cap" | "res") => {
                line.expect_positional(4, &format!("{word} <name> <nodeA> <nodeB> value=..."))?;
                let (name, a, b) = (line.positional[1], line.positional[2], line.positional[3]);
                check_name(number, "element", name)?;
                check_name(number, "node", a)?;
                check_name(number, "node", b)?;
                let value_var = line.take("value")?;
                if !is_symbol_name(value_var) {
                    return Err(syntax(number, format!("invalid variable name `{value_var}`")));
                }
                let fixed = match line.keyed.remove("fixed") {
                    Some(t) => Some(si_value(number, "fixed", t)?),
                    None => None,
                };
                line.finish()?;
                if a == b {
                    return Err(syntax(number, format!("both terminals on node `{a}`")));
                }
                if !element_names.insert(name.to_string()) {
                    return Err(NetlistError::Duplicate {
                        line: number,
                        what: "element",
                        name: name.to_string(),
                    });
                }
                let kind = if word == "cap" {
                    PassiveKind::Capacitor
                } else {
                    PassiveKind::Resistor
                };
                passives.push((
                    PassiveElement {
                        name: name.to_string(),
                        kind,
                        node_a: a.to_string(),
                        node_b: b.to_string(),
                        value_var: value_var.to_string(),
                    },
                    fixed,
                    number,
                ));
            }
            "var" => {
                line.expect_positional(2, "var <name> kind=<gm|gain|res|cap> [min=..] [max=..]")?;
                let name = line.positional[1];
                if !is_symbol_name(name) || name == LAPLACE || name == OMEGA_T {
                    return Err(syntax(number, format!("invalid variable name `{name}`")));
                }
                let kind_word = line.take("kind")?;
                let kind = VarKind::from_keyword(kind_word)
                    .ok_or_else(|| syntax(number, format!("unknown kind `{kind_word}`")))?;
                let mut var = DesignVariable::new(name, kind);
                if let Some(t) = line.keyed.remove("min") {
                    var.lower = si_value(number, "min", t)?;
                }
                if let Some(t) = line.keyed.remove("max") {
                    var.upper = si_value(number, "max", t)?;
                }
                line.finish()?;
                if declared.iter().any(|(v, _)| v.name == name) {
                    return Err(NetlistError::Duplicate {
                        line: number,
                        what: "variable",
                        name: name.to_string(),
                    });
                }
                var.check()?;
                declared.push((var, number));
            }
            "const" => {
                line.expect_positional(1, "const key=value")?;
                if line.keyed.is_empty() {
                    return Err(syntax(number, "const without assignment"));
                }
                for (k, v) in std::mem::take(&mut line.keyed) {
                    let value = si_value(number, k, v)?;
                    if value <= 0.0 {
                        return Err(syntax(number, format!("`{k}` must be positive")));
                    }
                    match k {
                        "omega_t" => omega_t = value,
                        "vdd" => vdd = value,
                        "gm_id" => gm_over_id = value,
                        other => return Err(syntax(number, format!("unknown constant `{other}`"))),
                    }
                }
            }
            other => return Err(syntax(number, format!("unknown statement `{other}`"))),
        }
    }

    // Resolve variables: declared ones first, then implicit fixed passives.
    let mut variables: Vec<DesignVariable> = declared.iter().map(|(v, _)| v.clone()).collect();
    let mut fixed_by: HashMap<String, f64> = HashMap::new();
    let mut require = |variables: &mut Vec<DesignVariable>,
                       name: &str,
                       kind: VarKind,
                       fixed: Option<f64>,
                       line: usize|
     -> Result<(), NetlistError> {
        match variables.iter_mut().find(|v| v.name == name) {
            Some(var) => {
                if var.kind != kind {
                    return Err(NetlistError::KindMismatch {
                        name: name.to_string(),
                        used: kind,
                        declared: var.kind,
                    });
                }
                if let Some(f) = fixed {
                    if let Some(prev) = fixed_by.insert(name.to_string(), f) {
                        if prev != f {
                            return Err(syntax(
                                line,
                                format!("`{name}` fixed to conflicting values {prev} and {f}"),
                            ));
                        }
                    }
                    var.fixed = Some(f);
                    var.check()?;
                }
                Ok(())
            }
            None => match fixed {
                Some(f) => {
                    let var = DesignVariable {
                        name: name.to_string(),
                        kind,
                        lower: f,
                        upper: f,
                        fixed: Some(f),
                    };
                    var.check()?;
                    fixed_by.insert(name.to_string(), f);
                    variables.push(var);
                    Ok(())
                }
                None => Err(NetlistError::MissingVariable {
                    name: name.to_string(),
                }),
            },
        }
    };

    // Walk elements in source order so implicit variables and node order are
    // deterministic.
    enum Item<'a> {
        Stage(&'a Stage),
        Passive(&'a PassiveElement, Option<f64>),
    }
    let mut items: Vec<(usize, Item)> = stages
        .iter()
        .map(|(s, l)| (*l, Item::Stage(s)))
        .chain(passives.iter().map(|(p, f, l)| (*l, Item::Passive(p, *f))))
        .collect();
    items.sort_by_key(|(l, _)| *l);

    let mut nodes: Vec<String> = Vec::new();
    let mut terminal_count: HashMap<String, usize> = HashMap::new();
    let mut note_node = |nodes: &mut Vec<String>, n: &str| {
        *terminal_count.entry(n.to_string()).or_default() += 1;
        if n != GROUND && n != INPUT && !nodes.iter().any(|x| x == n) {
            nodes.push(n.to_string());
        }
    };
    for (line, item) in &items {
        match item {
            Item::Stage(s) => {
                require(&mut variables, &s.gm_var, VarKind::Transconductance, None, *line)?;
                require(&mut variables, &s.gain_var, VarKind::StageGain, None, *line)?;
                note_node(&mut nodes, &s.input_node);
                note_node(&mut nodes, &s.output_node);
            }
            Item::Passive(p, fixed) => {
                let kind = match p.kind {
                    PassiveKind::Capacitor => VarKind::Capacitance,
                    PassiveKind::Resistor => VarKind::Resistance,
                };
                require(&mut variables, &p.value_var, kind, *fixed, *line)?;
                note_node(&mut nodes, &p.node_a);
                note_node(&mut nodes, &p.node_b);
            }
        }
    }

    // A passive terminal or stage input on a node nothing else touches is a
    // dangling reference, most likely a typo.
    for (line, item) in &items {
        let dangling: Vec<&str> = match item {
            Item::Stage(s) => vec![s.input_node.as_str()],
            Item::Passive(p, _) => vec![p.node_a.as_str(), p.node_b.as_str()],
        };
        for n in dangling {
            if n != GROUND && n != INPUT && n != OUTPUT && terminal_count[n] == 1 {
                return Err(NetlistError::UnknownNode {
                    line: *line,
                    node: n.to_string(),
                });
            }
        }
    }

    if !nodes.iter().any(|n| n == OUTPUT) {
        return Err(NetlistError::MissingPort(OUTPUT));
    }
    if !terminal_count.contains_key(INPUT) {
        return Err(NetlistError::MissingPort(INPUT));
    }

    Ok(Topology {
        variables,
        stages: stages.into_iter().map(|(s, _)| s).collect(),
        passives: passives.into_iter().map(|(p, _, _)| p).collect(),
        nodes,
        input_node: INPUT.to_string(),
        output_node: OUTPUT.to_string(),
        parasitics: Vec::new(),
        omega_t,
        vdd,
        gm_over_id,
        elaborated: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_line() {
        let t = parse_netlist(
            "var G1 kind=gm\nvar A1 kind=gain\nstage g1 in=vin out=vout gm=G1 sign=+ gain=A1\n",
        )
        .unwrap();
        assert_eq!(t.stages.len(), 1);
        let s = &t.stages[0];
        assert_eq!(s.polarity, Polarity::Positive);
        assert_eq!(s.input_node, "vin");
        assert_eq!(s.output_node, "vout");
        assert_eq!(s.gm_var, "G1");
        assert_eq!(s.gain_var, "A1");
        let g1 = t.variable("G1").unwrap();
        assert_eq!((g1.lower, g1.upper), (10e-6, 1e-3));
    }

    #[test]
    fn fixed_capacitor_declares_constant() {
        let t = parse_netlist(
            "var G1 kind=gm\nvar A1 kind=gain\nstage g1 in=vin out=vout gm=G1 sign=- gain=A1\ncap cl vout 0 value=CL fixed=10p\n",
        )
        .unwrap();
        let cl = t.variable("CL").unwrap();
        assert_eq!(cl.fixed, Some(1e-11));
        assert_eq!(cl.kind, VarKind::Capacitance);
        assert_eq!(t.passives[0].kind, PassiveKind::Capacitor);
    }

    #[test]
    fn same_node_terminals_rejected() {
        let err = parse_netlist("var R1 kind=res\nres rx n1 n1 value=R1\n").unwrap_err();
        assert!(matches!(err, NetlistError::Syntax { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_names() {
        let src = "var G1 kind=gm\nvar G1 kind=gm\n";
        assert!(matches!(
            parse_netlist(src),
            Err(NetlistError::Duplicate { line: 2, .. })
        ));
        let src = "var G1 kind=gm\nvar A1 kind=gain\nstage g1 in=vin out=vout gm=G1 sign=- gain=A1\ncap g1 vout 0 value=CL fixed=1p\n";
        assert!(matches!(
            parse_netlist(src),
            Err(NetlistError::Duplicate { line: 4, .. })
        ));
    }

    #[test]
    fn missing_variable() {
        let err = parse_netlist("var G1 kind=gm\nstage g1 in=vin out=vout gm=G1 sign=- gain=A1\n")
            .unwrap_err();
        assert_eq!(
            err,
            NetlistError::MissingVariable {
                name: "A1".to_string()
            }
        );
    }

    #[test]
    fn dangling_node_is_unknown() {
        let src = "var G1 kind=gm\nvar A1 kind=gain\nvar Cm kind=cap\nstage g1 in=vin out=vout gm=G1 sign=- gain=A1\ncap cm vuot vout value=Cm\n";
        assert_eq!(
            parse_netlist(src).unwrap_err(),
            NetlistError::UnknownNode {
                line: 5,
                node: "vuot".to_string()
            }
        );
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        for (src, line) in [
            ("bogus x\n", 1),
            ("# c\nvar X kind=volt\n", 2),
            ("var G1 kind=gm\nstage g1 in=vin out=vout gm=G1 sign=x gain=A\n", 2),
            ("const omega_t=abc\n", 1),
            ("var C kind=cap min=1p max=1f\n", 0),
        ] {
            match parse_netlist(src) {
                Err(NetlistError::Syntax { line: l, .. }) => assert_eq!(l, line, "{src}"),
                Err(NetlistError::InvalidVariable { .. }) => assert_eq!(line, 0),
                other => panic!("{src}: {other:?}"),
            }
        }
    }

    #[test]
    fn kind_mismatch() {
        let src = "var G1 kind=cap\nvar A1 kind=gain\nstage g1 in=vin out=vout gm=G1 sign=- gain=A1\n";
        assert!(matches!(
            parse_netlist(src),
            Err(NetlistError::KindMismatch { .. })
        ));
    }

    #[test]
    fn constants_override_defaults() {
        let t = parse_netlist(
            "var G1 kind=gm\nvar A1 kind=gain\nstage g1 in=vin out=vout gm=G1 sign=- gain=A1\nconst vdd=3.3 gm_id=15\nconst omega_t=1G\n",
        )
        .unwrap();
        assert_eq!(t.vdd, 3.3);
        assert_eq!(t.gm_over_id, 15.0);
        assert_eq!(t.omega_t, 1e9);
    }
}
