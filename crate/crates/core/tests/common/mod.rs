#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use protcomp::graph::DefenseGraph;
use protcomp::ilp::{complete_assignment, IlpModel, Sense, VarRole};
use protcomp::passes::{Constraint, Manifest, ManifestId, ManifestKind, NodeRef};
use protcomp::program::{generate_program, BlockId, InstrId, ProgramModel};

pub fn bare(id: u32, kind: ManifestKind) -> Manifest {
    Manifest {
        id: ManifestId(id),
        kind,
        placement_block: BlockId(0),
        guard_instructions: Vec::new(),
        protected_instruction_ids: BTreeSet::new(),
        protected_block_ids: BTreeSet::new(),
        constraints: Vec::new(),
        cost: 1.0,
        hash_variable: None,
        mobilizes: None,
    }
}

/// `reader` needs the final bytes of `read`.
pub fn reads(reader: &mut Manifest, read: u32) {
    reader.constraints.push(Constraint::Order {
        before: NodeRef::Manifest(ManifestId(read)),
        after: NodeRef::Manifest(reader.id),
    });
}

pub fn ids(xs: &[u32]) -> Vec<ManifestId> {
    xs.iter().map(|x| ManifestId(*x)).collect()
}

pub fn id_set(xs: &[u32]) -> BTreeSet<ManifestId> {
    xs.iter().map(|x| ManifestId(*x)).collect()
}

/// Manifest ids of the model, in variable order.
pub fn manifest_order(model: &IlpModel) -> Vec<ManifestId> {
    model
        .vars
        .iter()
        .filter_map(|v| match v {
            VarRole::Manifest(m) => Some(*m),
            _ => None,
        })
        .collect()
}

/// Best objective over every subset of manifest variables, with arc and flag
/// variables recomputed from the subset. `None` if no subset is feasible.
pub fn brute_force(model: &IlpModel) -> Option<(f64, BTreeSet<ManifestId>)> {
    let ms = manifest_order(model);
    assert!(ms.len() <= 20, "too many manifests to enumerate");
    let mut best: Option<(f64, BTreeSet<ManifestId>)> = None;
    for mask in 0u32..(1 << ms.len()) {
        let sel: BTreeSet<ManifestId> = ms
            .iter()
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 1)
            .map(|(_, m)| *m)
            .collect();
        let x = complete_assignment(model, &sel);
        if !model.feasible(&x) {
            continue;
        }
        let v = model.objective_value(&x);
        let better = match &best {
            None => true,
            Some((b, _)) => match model.sense {
                Sense::Minimize => v < *b - 1e-9,
                Sense::Maximize => v > *b + 1e-9,
            },
        };
        if better {
            best = Some((v, sel));
        }
    }
    best
}

/// Plain DFS reachability over the dependency arcs.
pub fn has_cycle(graph: &DefenseGraph) -> bool {
    let mut succ: BTreeMap<NodeRef, Vec<NodeRef>> = BTreeMap::new();
    for (a, b) in &graph.dependency_arcs {
        succ.entry(*a).or_default().push(*b);
    }
    // colours: 0 unseen, 1 on path, 2 done
    let mut colour: BTreeMap<NodeRef, u8> = BTreeMap::new();
    fn visit(
        n: NodeRef,
        succ: &BTreeMap<NodeRef, Vec<NodeRef>>,
        colour: &mut BTreeMap<NodeRef, u8>,
    ) -> bool {
        colour.insert(n, 1);
        for m in succ.get(&n).into_iter().flatten() {
            match colour.get(m).copied().unwrap_or(0) {
                1 => return true,
                0 if visit(*m, succ, colour) => return true,
                _ => {}
            }
        }
        colour.insert(n, 2);
        false
    }
    let nodes: Vec<NodeRef> = graph.nodes.keys().copied().collect();
    nodes
        .into_iter()
        .any(|n| colour.get(&n).copied().unwrap_or(0) == 0 && visit(n, &succ, &mut colour))
}

/// Manifests that sit on some dependency cycle, found by pairwise reachability.
pub fn manifests_on_cycles(graph: &DefenseGraph) -> BTreeSet<ManifestId> {
    let mut succ: BTreeMap<NodeRef, Vec<NodeRef>> = BTreeMap::new();
    for (a, b) in &graph.dependency_arcs {
        succ.entry(*a).or_default().push(*b);
    }
    let reach = |from: NodeRef| {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<NodeRef> = succ.get(&from).cloned().unwrap_or_default();
        while let Some(n) = stack.pop() {
            if seen.insert(n) {
                stack.extend(succ.get(&n).into_iter().flatten().copied());
            }
        }
        seen
    };
    graph
        .manifest_ids()
        .filter(|m| reach(NodeRef::Manifest(*m)).contains(&NodeRef::Manifest(*m)))
        .collect()
}

pub fn small_program(seed: u64) -> ProgramModel {
    let n = 2 + (seed % 3) as usize;
    let blocks = 1 + (seed % 2) as usize;
    let det = 0.3 + (seed % 5) as f64 * 0.1;
    let mut p = generate_program(seed, n, blocks, det);
    p.name = format!("small-{seed}");
    p
}

pub fn program_ids(p: &ProgramModel) -> BTreeSet<InstrId> {
    p.instructions().map(|(_, _, i)| i.id).collect()
}
