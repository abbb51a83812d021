use serde::{Deserialize, Serialize};

use super::Topology;

/// A forward chain of stages from the input node to the output node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalPath {
    pub stages: Vec<String>,
    /// Product of stage polarities: the DC sign this path contributes.
    pub polarity: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    Path(SignalPath),
    /// The path's DC sign disagrees with the first reported path.
    PolarityConflict { path: SignalPath, expected: i64 },
    NoSignalPath,
}

/// List forward signal paths and flag DC polarity disagreements.
pub fn validate_topology(t: &Topology) -> Vec<Diagnostic> {
    let mut paths = Vec::new();
    let mut visited = vec![t.input_node.clone()];
    let mut chain = Vec::new();
    walk(t, &t.input_node, &mut visited, &mut chain, &mut paths);

    if paths.is_empty() {
        return vec![Diagnostic::NoSignalPath];
    }
    let reference = paths[0].polarity;
    let mut out: Vec<Diagnostic> = paths.iter().cloned().map(Diagnostic::Path).collect();
    out.extend(
        paths
            .into_iter()
            .filter(|p| p.polarity != reference)
            .map(|path| Diagnostic::PolarityConflict {
                path,
                expected: reference,
            }),
    );
    out
}

fn walk(
    t: &Topology,
    node: &str,
    visited: &mut Vec<String>,
    chain: &mut Vec<usize>,
    paths: &mut Vec<SignalPath>,
) {
    if node == t.output_node {
        paths.push(SignalPath {
            stages: chain.iter().map(|&i| t.stages[i].name.clone()).collect(),
            polarity: chain.iter().map(|&i| t.stages[i].polarity.sign()).product(),
        });
        return;
    }
    for (i, s) in t.stages.iter().enumerate() {
        if s.input_node != node || visited.contains(&s.output_node) {
            continue;
        }
        visited.push(s.output_node.clone());
        chain.push(i);
        walk(t, &s.output_node, visited, chain, paths);
        chain.pop();
        visited.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library;
    use crate::netlist::{elaborate, parse_netlist};

    fn paths(src: &str) -> Vec<Diagnostic> {
        validate_topology(&elaborate(&parse_netlist(src).unwrap()).unwrap())
    }

    #[test]
    fn mzc_has_two_agreeing_paths() {
        let d = paths(library::MZC);
        assert_eq!(
            d,
            vec![
                Diagnostic::Path(SignalPath {
                    stages: vec!["g1".into(), "g2".into()],
                    polarity: 1
                }),
                Diagnostic::Path(SignalPath {
                    stages: vec!["gf".into()],
                    polarity: 1
                }),
            ]
        );
    }

    #[test]
    fn single_stage_one_path() {
        let d = paths(library::SINGLE_STAGE);
        assert_eq!(d.len(), 1);
        assert!(matches!(&d[0], Diagnostic::Path(p) if p.stages == ["g1"]));
    }

    #[test]
    fn conflicting_feedforward_is_flagged() {
        let src = library::MZC.replace("gm=Gf sign=+", "gm=Gf sign=-");
        let d = paths(&src);
        assert!(d
            .iter()
            .any(|x| matches!(x, Diagnostic::PolarityConflict { expected: 1, .. })));
    }

    #[test]
    fn no_path() {
        // Output reached only through a capacitor.
        let src = "var G1 kind=gm\nvar A1 kind=gain\nvar Cx kind=cap\n\
                   stage g1 in=vin out=n1 gm=G1 sign=- gain=A1\n\
                   cap cx n1 vout value=Cx\ncap cl vout 0 value=CL fixed=1p\n";
        assert_eq!(paths(src), vec![Diagnostic::NoSignalPath]);
    }
}
