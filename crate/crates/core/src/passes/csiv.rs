//! Call stack integrity verification: callers deposit tokens, sensitive
//! functions check that an authentic token arrived.

use std::collections::{BTreeMap, BTreeSet};

use super::{
    guard_ops, Constraint, IdAlloc, Manifest, ManifestId, ManifestKind, NodeRef, PassConfig,
};
use crate::program::{FunctionId, ProgramModel};

fn ancestors(program: &ProgramModel, target: FunctionId) -> BTreeSet<FunctionId> {
    let graph = program.call_graph();
    let mut callers: BTreeMap<FunctionId, Vec<FunctionId>> = BTreeMap::new();
    for (caller, callees) in &graph {
        for c in callees {
            callers.entry(*c).or_default().push(*caller);
        }
    }
    let mut seen = BTreeSet::from([target]);
    let mut stack = vec![target];
    while let Some(f) = stack.pop() {
        for c in callers.get(&f).into_iter().flatten() {
            if seen.insert(*c) {
                stack.push(*c);
            }
        }
    }
    seen
}

pub(super) fn propose(
    program: &ProgramModel,
    config: &PassConfig,
    ids: &mut IdAlloc,
) -> Vec<Manifest> {
    let live = |f: &FunctionId| program.function(*f).is_some_and(|f| !f.mobilized);
    let sensitive: Vec<FunctionId> = program
        .functions
        .iter()
        .filter(|f| f.sensitive && !f.mobilized)
        .map(|f| f.id)
        .collect();
    let paths: BTreeMap<FunctionId, BTreeSet<FunctionId>> = sensitive
        .iter()
        .map(|s| {
            (
                *s,
                ancestors(program, *s).into_iter().filter(live).collect(),
            )
        })
        .collect();
    let hosts: BTreeSet<FunctionId> = paths.values().flatten().copied().collect();

    let mut out = Vec::new();
    let mut register_of: BTreeMap<FunctionId, ManifestId> = BTreeMap::new();
    for f in &hosts {
        let id = ids.manifest();
        let n = config.guard_sizes.csiv_register.max(1);
        out.push(Manifest {
            id,
            kind: ManifestKind::CSIV_REGISTER,
            placement_block: program.function(*f).expect("host exists").entry_block,
            guard_instructions: ids.guards(id, &vec!["csiv.register"; n], None),
            protected_instruction_ids: BTreeSet::new(),
            protected_block_ids: BTreeSet::new(),
            constraints: Vec::new(),
            cost: 0.0,
            hash_variable: None,
            mobilizes: None,
        });
        register_of.insert(*f, id);
    }

    for s in &sensitive {
        let func = program.function(*s).expect("sensitive exists");
        let entry = func.block(func.entry_block).expect("validated");
        let id = ids.manifest();
        let n = config.guard_sizes.csiv_verify.max(1);
        let guards = ids.guards(
            id,
            &guard_ops(&["csiv.expected", "csiv.verify"], n),
            Some(0),
        );
        let placeholder = guards[0].instruction.id;
        let registers: Vec<ManifestId> = paths[s].iter().map(|f| register_of[f]).collect();
        let mut constraints: Vec<Constraint> = registers
            .iter()
            .map(|r| Constraint::Order {
                before: NodeRef::Manifest(*r),
                after: NodeRef::Manifest(id),
            })
            .collect();
        constraints.extend(entry.instructions.iter().map(|i| Constraint::Order {
            before: NodeRef::Instruction(i.id),
            after: NodeRef::Manifest(id),
        }));
        constraints.push(Constraint::Present {
            dependent: id,
            required: registers.iter().map(|r| NodeRef::Manifest(*r)).collect(),
            min_count: 1,
        });
        constraints.push(Constraint::Preserve {
            instructions: vec![placeholder],
        });
        out.push(Manifest {
            id,
            kind: ManifestKind::CSIV_VERIFY,
            placement_block: entry.id,
            guard_instructions: guards,
            protected_instruction_ids: entry.instructions.iter().map(|i| i.id).collect(),
            protected_block_ids: BTreeSet::from([entry.id]),
            constraints,
            cost: 0.0,
            hash_variable: None,
            mobilizes: None,
        });
    }
    out
}
