use std::collections::{BTreeSet, VecDeque};

use super::{
    NetlistError, Parasitic, ParasiticKind, Topology, GROUND, OMEGA_T,
};
use crate::symbolic::Poly;

/// Attach stage parasitics and check connectivity.
///
/// Every stage gets `R_p = A/G` from its output to ground. The first stage
/// (in declaration order) driving a node that feeds further stages also gets
/// `C_p = sum(G_next)/omega_t` there; stages that only drive the load get none.
/// Running this on an already elaborated topology yields the same topology.
pub fn elaborate(t: &Topology) -> Result<Topology, NetlistError> {
    let mut out = t.clone();
    out.parasitics.clear();

    check_connectivity(t)?;

    let mut capacitive_nodes: BTreeSet<&str> = BTreeSet::new();
    for (i, stage) in t.stages.iter().enumerate() {
        let driven: Vec<&str> = t
            .stages
            .iter()
            .filter(|s| s.input_node == stage.output_node)
            .map(|s| s.gm_var.as_str())
            .collect();
        out.stages[i].drives_load_only = driven.is_empty();

        out.parasitics.push(Parasitic {
            stage: stage.name.clone(),
            kind: ParasiticKind::Resistance,
            node: stage.output_node.clone(),
            symbol: format!("Rp_{}", stage.name),
            expr: Poly::var(&stage.gain_var) * Poly::var_pow(&stage.gm_var, -1),
        });

        if !driven.is_empty() && capacitive_nodes.insert(stage.output_node.as_str()) {
            let sum = driven
                .iter()
                .fold(Poly::zero(), |acc, g| acc + Poly::var(g));
            out.parasitics.push(Parasitic {
                stage: stage.name.clone(),
                kind: ParasiticKind::Capacitance,
                node: stage.output_node.clone(),
                symbol: format!("Cp_{}", stage.name),
                expr: sum * Poly::var_pow(OMEGA_T, -1),
            });
        }
    }
    out.elaborated = true;
    Ok(out)
}

fn check_connectivity(t: &Topology) -> Result<(), NetlistError> {
    for stage in &t.stages {
        let node = &stage.output_node;
        if node == &t.output_node {
            continue;
        }
        let used = t.stages.iter().any(|s| &s.input_node == node)
            || t.passives.iter().any(|p| &p.node_a == node || &p.node_b == node);
        if !used {
            return Err(NetlistError::UnconnectedOutput {
                stage: stage.name.clone(),
                node: node.clone(),
            });
        }
    }

    // Forward reachability: stages carry signal in -> out, passives both ways.
    let forward = |from: &str| -> Vec<String> {
        let mut next: Vec<String> = t
            .stages
            .iter()
            .filter(|s| s.input_node == from)
            .map(|s| s.output_node.clone())
            .collect();
        next.extend(passive_neighbours(t, from));
        next
    };
    let backward = |from: &str| -> Vec<String> {
        let mut next: Vec<String> = t
            .stages
            .iter()
            .filter(|s| s.output_node == from)
            .map(|s| s.input_node.clone())
            .collect();
        next.extend(passive_neighbours(t, from));
        next
    };

    let from_input = reach(&t.input_node, forward);
    let unreached: Vec<String> = t
        .nodes
        .iter()
        .filter(|n| !from_input.contains(n.as_str()))
        .cloned()
        .collect();
    if !unreached.is_empty() {
        return Err(NetlistError::UndrivenLoop { nodes: unreached });
    }
    let to_output = reach(&t.output_node, backward);
    if let Some(n) = t.nodes.iter().find(|n| !to_output.contains(n.as_str())) {
        return Err(NetlistError::DeadEnd { node: n.clone() });
    }
    Ok(())
}

fn passive_neighbours(t: &Topology, node: &str) -> Vec<String> {
    t.passives
        .iter()
        .filter_map(|p| {
            if p.node_a == node {
                Some(p.node_b.clone())
            } else if p.node_b == node {
                Some(p.node_a.clone())
            } else {
                None
            }
        })
        .filter(|n| n != GROUND)
        .collect()
}

fn reach(start: &str, step: impl Fn(&str) -> Vec<String>) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([start.to_string()]);
    while let Some(n) = queue.pop_front() {
        if !seen.insert(n.clone()) {
            continue;
        }
        queue.extend(step(&n));
    }
    seen
}
