//! Defense graph over manifests, functions and instructions.
//!
//! A dependency arc `(x, y)` means `x` reads the final bytes of `y`, so `y`
//! must be finalized first. Arcs into a function node are expanded to the
//! function's instructions and to every manifest placed inside it (guards
//! become part of the code the function occupies).
//!
//! Guard instructions are not nodes of their own; references to them resolve
//! to the owning manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::passes::{Constraint, Manifest, ManifestId, ManifestKind, NodeRef};
use crate::program::{FunctionId, InstrId, ProgramModel};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeAttr {
    pub exec_freq_norm: f64,
    pub preserve: bool,
    pub static_presence_required: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<ManifestKind>,
}

#[derive(Debug, Clone, Default)]
pub struct DefenseGraph {
    pub nodes: BTreeMap<NodeRef, NodeAttr>,
    pub dependency_arcs: BTreeSet<(NodeRef, NodeRef)>,
    /// Subset of `dependency_arcs` produced by expanding function nodes.
    pub transitive_arcs: BTreeSet<(NodeRef, NodeRef)>,
    pub present_arcs: BTreeSet<(ManifestId, NodeRef)>,
    /// `(protector, protectee)`: the protector's checked region contains a
    /// guard of the protectee.
    pub protection_arcs: BTreeSet<(ManifestId, ManifestId)>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Cycle {
    pub manifest_ids: Vec<ManifestId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GraphSummary {
    pub nodes: usize,
    pub manifest_nodes: usize,
    pub dependency_arcs: usize,
    pub transitive_arcs: usize,
    pub present_arcs: usize,
    pub protection_arcs: usize,
    pub cyclic_sccs: usize,
}

/// Manifests with a guard inside the region `checker` verifies.
pub fn covered_manifests(checker: &Manifest, manifests: &[Manifest]) -> BTreeSet<ManifestId> {
    let mut out = BTreeSet::new();
    for m in manifests
        .iter()
        .filter(|m| m.id != checker.id && !m.guard_instructions.is_empty())
    {
        if m.guard_ids()
            .any(|g| checker.protected_instruction_ids.contains(&g))
        {
            out.insert(m.id);
        }
    }
    if checker.kind == ManifestKind::SC {
        // the checked function contains every guard placed in its blocks
        for m in manifests
            .iter()
            .filter(|m| m.id != checker.id && !m.guard_instructions.is_empty())
        {
            if checker.protected_block_ids.contains(&m.placement_block) {
                out.insert(m.id);
            }
        }
    }
    if checker.kind == ManifestKind::CSIV_VERIFY {
        let present: BTreeSet<ManifestId> = manifests.iter().map(|m| m.id).collect();
        out.extend(
            checker
                .checked_manifests()
                .into_iter()
                .filter(|r| present.contains(r)),
        );
    }
    out
}

pub fn build_graph(manifests: &[Manifest], program: &ProgramModel) -> Result<DefenseGraph> {
    let mut g = DefenseGraph::default();
    let mut guard_owner: BTreeMap<InstrId, ManifestId> = BTreeMap::new();
    for m in manifests {
        for id in m.guard_ids() {
            guard_owner.insert(id, m.id);
        }
    }
    for (_, r) in program.all_instructions() {
        if let crate::program::InstrRef::Guard(gd) = r {
            guard_owner.entry(gd.instruction.id).or_insert(gd.owner);
        }
    }
    let variables: BTreeSet<InstrId> = manifests.iter().filter_map(|m| m.hash_variable).collect();
    let freq_of_block = |b| program.normalized_freq(b).unwrap_or(0.0);
    let instr_block: BTreeMap<InstrId, _> = program
        .all_instructions()
        .map(|(b, r)| (r.instruction().id, b))
        .collect();
    let ids: BTreeSet<ManifestId> = manifests.iter().map(|m| m.id).collect();
    let preserved: BTreeSet<InstrId> = manifests.iter().flat_map(|m| m.preserved()).collect();

    for m in manifests {
        g.nodes.insert(
            NodeRef::Manifest(m.id),
            NodeAttr {
                exec_freq_norm: freq_of_block(m.placement_block),
                preserve: m
                    .constraints
                    .iter()
                    .any(|c| matches!(c, Constraint::Preserve { .. })),
                static_presence_required: false,
                kind: Some(m.kind),
            },
        );
    }

    let resolve = |m: &Manifest, n: NodeRef| -> Result<NodeRef> {
        let dangling = || Error::DanglingReference {
            manifest: m.id,
            node: n.to_string(),
        };
        match n {
            NodeRef::Instruction(i) => {
                if let Some(owner) = guard_owner.get(&i) {
                    if ids.contains(owner) {
                        Ok(NodeRef::Manifest(*owner))
                    } else {
                        Err(dangling())
                    }
                } else if instr_block.contains_key(&i) || variables.contains(&i) {
                    Ok(n)
                } else {
                    Err(dangling())
                }
            }
            NodeRef::Function(f) if program.function(f).is_none() => Err(dangling()),
            NodeRef::Manifest(id) if !ids.contains(&id) => Err(dangling()),
            _ => Ok(n),
        }
    };

    let add_node = |g: &mut DefenseGraph, n: NodeRef| {
        g.nodes.entry(n).or_insert_with(|| {
            let exec_freq_norm = match n {
                NodeRef::Instruction(i) => instr_block.get(&i).map_or(0.0, |b| freq_of_block(*b)),
                NodeRef::Function(f) => program
                    .function(f)
                    .map_or(0.0, |f| freq_of_block(f.entry_block)),
                NodeRef::Manifest(_) => 0.0,
            };
            NodeAttr {
                exec_freq_norm,
                preserve: matches!(n, NodeRef::Instruction(i) if preserved.contains(&i)),
                static_presence_required: false,
                kind: None,
            }
        });
    };

    // members of each function: its program instructions and the manifests placed in it
    let mut members: BTreeMap<FunctionId, Vec<NodeRef>> = BTreeMap::new();
    for f in &program.functions {
        let list = members.entry(f.id).or_default();
        for b in f.code_blocks() {
            list.extend(b.instructions.iter().map(|i| NodeRef::Instruction(i.id)));
        }
    }
    for m in manifests
        .iter()
        .filter(|m| !m.guard_instructions.is_empty())
    {
        if let Some(f) = program.function_of_block(m.placement_block) {
            members.entry(f).or_default().push(NodeRef::Manifest(m.id));
        }
    }

    for m in manifests {
        for c in &m.constraints {
            match c {
                Constraint::Order { before, after } => {
                    let from = resolve(m, *after)?;
                    let to = resolve(m, *before)?;
                    add_node(&mut g, from);
                    add_node(&mut g, to);
                    g.dependency_arcs.insert((from, to));
                    for (x, y) in [(from, to), (to, from)] {
                        if let NodeRef::Function(f) = y {
                            for member in members.get(&f).into_iter().flatten() {
                                if *member == x {
                                    continue;
                                }
                                add_node(&mut g, *member);
                                let arc = if y == to { (x, *member) } else { (*member, x) };
                                g.dependency_arcs.insert(arc);
                                g.transitive_arcs.insert(arc);
                            }
                        }
                    }
                }
                Constraint::Present {
                    dependent,
                    required,
                    ..
                } => {
                    for r in required {
                        let to = resolve(m, *r)?;
                        add_node(&mut g, to);
                        if let NodeRef::Function(_) = to {
                            g.nodes
                                .get_mut(&to)
                                .expect("added")
                                .static_presence_required = true;
                        }
                        g.present_arcs.insert((*dependent, to));
                    }
                }
                Constraint::Preserve { instructions } => {
                    for i in instructions {
                        resolve(m, NodeRef::Instruction(*i))?;
                    }
                }
            }
        }
    }

    for j in manifests
        .iter()
        .filter(|m| m.kind.is_checker() || !m.protected_instruction_ids.is_empty())
    {
        for i in covered_manifests(j, manifests) {
            g.protection_arcs.insert((j.id, i));
        }
    }
    Ok(g)
}

impl DefenseGraph {
    pub fn manifest_ids(&self) -> impl Iterator<Item = ManifestId> + '_ {
        self.nodes.keys().filter_map(|n| match n {
            NodeRef::Manifest(m) => Some(*m),
            _ => None,
        })
    }

    /// Induced subgraph keeping only the `selected` manifests (all program and
    /// variable nodes stay). Arcs out of hash variables survive even when the
    /// hash manifest that declared them is dropped, so cycle detection is
    /// monotone in the selection.
    pub fn restrict(&self, selected: &BTreeSet<ManifestId>) -> DefenseGraph {
        let keep = |n: &NodeRef| match n {
            NodeRef::Manifest(m) => selected.contains(m),
            _ => true,
        };
        DefenseGraph {
            nodes: self
                .nodes
                .iter()
                .filter(|(n, _)| keep(n))
                .map(|(n, a)| (*n, a.clone()))
                .collect(),
            dependency_arcs: self
                .dependency_arcs
                .iter()
                .filter(|(a, b)| keep(a) && keep(b))
                .copied()
                .collect(),
            transitive_arcs: self
                .transitive_arcs
                .iter()
                .filter(|(a, b)| keep(a) && keep(b))
                .copied()
                .collect(),
            present_arcs: self
                .present_arcs
                .iter()
                .filter(|(a, b)| selected.contains(a) && keep(b))
                .copied()
                .collect(),
            protection_arcs: self
                .protection_arcs
                .iter()
                .filter(|(a, b)| selected.contains(a) && selected.contains(b))
                .copied()
                .collect(),
        }
    }

    /// Manifest-level dependencies: `m -> n` when `m` reaches `n` through
    /// non-manifest nodes only.
    pub fn manifest_dependencies(&self) -> BTreeMap<ManifestId, BTreeSet<ManifestId>> {
        let succ = self.successors();
        let mut out = BTreeMap::new();
        for m in self.manifest_ids() {
            let mut deps = BTreeSet::new();
            let mut seen = BTreeSet::new();
            let mut stack: Vec<NodeRef> =
                succ.get(&NodeRef::Manifest(m)).cloned().unwrap_or_default();
            while let Some(n) = stack.pop() {
                if !seen.insert(n) {
                    continue;
                }
                match n {
                    NodeRef::Manifest(d) => {
                        deps.insert(d);
                    }
                    _ => stack.extend(succ.get(&n).into_iter().flatten().copied()),
                }
            }
            out.insert(m, deps);
        }
        out
    }

    fn successors(&self) -> BTreeMap<NodeRef, Vec<NodeRef>> {
        let mut succ: BTreeMap<NodeRef, Vec<NodeRef>> = BTreeMap::new();
        for (a, b) in &self.dependency_arcs {
            succ.entry(*a).or_default().push(*b);
        }
        succ
    }

    pub fn summary(&self) -> GraphSummary {
        GraphSummary {
            nodes: self.nodes.len(),
            manifest_nodes: self.manifest_ids().count(),
            dependency_arcs: self.dependency_arcs.len(),
            transitive_arcs: self.transitive_arcs.len(),
            present_arcs: self.present_arcs.len(),
            protection_arcs: self.protection_arcs.len(),
            cyclic_sccs: find_cycles(self).len(),
        }
    }
}

/// Strongly connected components of the dependency arcs (iterative Tarjan),
/// reported as one [`Cycle`] per cyclic component containing a manifest.
pub fn find_cycles(graph: &DefenseGraph) -> Vec<Cycle> {
    let nodes: Vec<NodeRef> = graph.nodes.keys().copied().collect();
    let index_of: BTreeMap<NodeRef, usize> =
        nodes.iter().enumerate().map(|(k, n)| (*n, k)).collect();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    let mut self_loop = vec![false; nodes.len()];
    for (a, b) in &graph.dependency_arcs {
        let (Some(&x), Some(&y)) = (index_of.get(a), index_of.get(b)) else {
            continue;
        };
        adj[x].push(y);
        if x == y {
            self_loop[x] = true;
        }
    }

    const UNSEEN: usize = usize::MAX;
    let n = nodes.len();
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut next = 0;
    let mut comps: Vec<Vec<usize>> = Vec::new();

    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        let mut work: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut edge)) = work.last_mut() {
            if *edge < adj[v].len() {
                let w = adj[v][*edge];
                *edge += 1;
                if index[w] == UNSEEN {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                work.pop();
                if let Some(&(parent, _)) = work.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comps.push(comp);
                }
            }
        }
    }

    let mut cycles: Vec<Cycle> = comps
        .into_iter()
        .filter(|c| c.len() >= 2 || self_loop[c[0]])
        .filter_map(|c| {
            let mut ids: Vec<ManifestId> = c
                .iter()
                .filter_map(|k| match nodes[*k] {
                    NodeRef::Manifest(m) => Some(m),
                    _ => None,
                })
                .collect();
            ids.sort();
            (!ids.is_empty()).then_some(Cycle { manifest_ids: ids })
        })
        .collect();
    cycles.sort();
    cycles
}

fn dot_id(n: &NodeRef) -> String {
    match n {
        NodeRef::Manifest(m) => format!("m{}", m.0),
        NodeRef::Function(f) => format!("F{}", f.0),
        NodeRef::Instruction(i) => format!("i{}", i.0),
    }
}

/// DOT rendering: solid arcs are direct dependencies, gray ones come from
/// function expansion, dashed arcs are presence requirements and dotted arcs
/// guard protection.
pub fn export_dot(graph: &DefenseGraph) -> String {
    if graph.nodes.is_empty() {
        return "digraph defense {}\n".to_string();
    }
    let mut s = String::from("digraph defense {\n  rankdir=LR;\n");
    for (n, a) in &graph.nodes {
        let (label, shape) = match (n, a.kind) {
            (NodeRef::Manifest(m), Some(k)) => (format!("{m}:{k}"), "box"),
            (NodeRef::Function(f), _) => (format!("{f}"), "component"),
            _ => (format!("{n}"), "ellipse"),
        };
        let mut extra = String::new();
        if a.preserve {
            extra.push_str(", peripheries=2");
        }
        if a.static_presence_required {
            extra.push_str(", style=bold");
        }
        let _ = writeln!(
            s,
            "  {} [label=\"{}\\n{:.2}\", shape={}{}];",
            dot_id(n),
            label,
            a.exec_freq_norm,
            shape,
            extra
        );
    }
    for (a, b) in &graph.dependency_arcs {
        if graph.transitive_arcs.contains(&(*a, *b)) {
            let _ = writeln!(s, "  {} -> {} [color=gray];", dot_id(a), dot_id(b));
        } else {
            let _ = writeln!(s, "  {} -> {};", dot_id(a), dot_id(b));
        }
    }
    for (a, b) in &graph.present_arcs {
        let _ = writeln!(
            s,
            "  {} -> {} [style=dashed];",
            dot_id(&NodeRef::Manifest(*a)),
            dot_id(b)
        );
    }
    for (a, b) in &graph.protection_arcs {
        let _ = writeln!(
            s,
            "  {} -> {} [style=dotted, arrowhead=odot];",
            dot_id(&NodeRef::Manifest(*a)),
            dot_id(&NodeRef::Manifest(*b))
        );
    }
    s.push_str("}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::mileage;
    use crate::passes::{propose_all, PassConfig};

    #[test]
    fn empty_graph_dot() {
        let g = build_graph(&[], &ProgramModel::empty("e")).unwrap();
        assert_eq!(g.manifest_ids().count(), 0);
        assert!(g.dependency_arcs.is_empty());
        assert_eq!(export_dot(&g), "digraph defense {}\n");
        assert!(find_cycles(&g).is_empty());
    }

    #[test]
    fn mileage_single_cycle_sc_and_oh_verify() {
        let p = mileage();
        let ms = propose_all(&p, &PassConfig::default()).unwrap();
        let g = build_graph(&ms, &p).unwrap();
        let cycles = find_cycles(&g);
        assert_eq!(cycles.len(), 1);
        let kinds: Vec<ManifestKind> = cycles[0]
            .manifest_ids
            .iter()
            .map(|id| ms.iter().find(|m| m.id == *id).unwrap().kind)
            .collect();
        assert_eq!(kinds, vec![ManifestKind::SC, ManifestKind::OH_VERIFY]);
    }

    #[test]
    fn sc_arc_is_expanded_into_callee() {
        let p = mileage();
        let ms = propose_all(&p, &PassConfig::default()).unwrap();
        let g = build_graph(&ms, &p).unwrap();
        let sc = ms.iter().find(|m| m.kind == ManifestKind::SC).unwrap();
        let f = sc.protected_function().unwrap();
        assert!(g
            .dependency_arcs
            .contains(&(NodeRef::Manifest(sc.id), NodeRef::Function(f))));
        for i in &sc.protected_instruction_ids {
            let arc = (NodeRef::Manifest(sc.id), NodeRef::Instruction(*i));
            assert!(g.transitive_arcs.contains(&arc));
        }
    }

    #[test]
    fn dangling_reference() {
        let p = mileage();
        let mut ms = propose_all(&p, &PassConfig::default()).unwrap();
        let first = ms[0].id;
        ms[0].constraints.push(Constraint::Order {
            before: NodeRef::Instruction(InstrId(9999)),
            after: NodeRef::Manifest(first),
        });
        assert!(matches!(
            build_graph(&ms, &p),
            Err(Error::DanglingReference { .. })
        ));
    }

    #[test]
    fn dot_has_dashed_verify_to_hash() {
        let p = mileage();
        let ms = propose_all(&p, &PassConfig::default()).unwrap();
        let g = build_graph(&ms, &p).unwrap();
        let v = ms
            .iter()
            .find(|m| m.kind == ManifestKind::OH_VERIFY)
            .unwrap();
        let h = ms.iter().find(|m| m.kind == ManifestKind::OH_HASH).unwrap();
        let line = format!("m{} -> m{} [style=dashed];", v.id.0, h.id.0);
        assert!(export_dot(&g).contains(&line));
    }
}
