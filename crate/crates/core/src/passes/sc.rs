//! Self-checksumming: checker guards that hash another function's code.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    coldest_block, guard_ops, Constraint, IdAlloc, Manifest, ManifestKind, NodeRef, PassConfig,
};
use crate::program::{FunctionId, ProgramModel};

const OPS: &[&str] = &[
    "sc.addr",
    "sc.size",
    "sc.hash",
    "sc.expected",
    "sc.cmp",
    "sc.respond",
    "sc.loop",
    "sc.load",
];

fn reaches(
    net: &BTreeMap<FunctionId, BTreeSet<FunctionId>>,
    from: FunctionId,
    to: FunctionId,
) -> bool {
    let mut stack = vec![from];
    let mut seen = BTreeSet::new();
    while let Some(f) = stack.pop() {
        if f == to {
            return true;
        }
        if seen.insert(f) {
            stack.extend(net.get(&f).into_iter().flatten().copied());
        }
    }
    false
}

/// Checkers form an acyclic network: a checker placed in C protecting F is
/// only added when F does not already (transitively) check C. Deepest
/// functions are protected first so callers end up as checkers.
pub(super) fn propose(
    program: &ProgramModel,
    config: &PassConfig,
    ids: &mut IdAlloc,
) -> Vec<Manifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let depths = program.call_depths();
    let eligible: Vec<FunctionId> = program
        .functions
        .iter()
        .filter(|f| !f.mobilized && f.code_blocks().next().is_some())
        .map(|f| f.id)
        .collect();
    let mut order = eligible.clone();
    order.sort_by(|a, b| depths[b].cmp(&depths[a]).then(a.cmp(b)));

    let mut net: BTreeMap<FunctionId, BTreeSet<FunctionId>> = BTreeMap::new();
    let mut out = Vec::new();
    for f in order {
        let mut candidates: Vec<FunctionId> =
            eligible.iter().copied().filter(|c| *c != f).collect();
        candidates.shuffle(&mut rng);
        let mut chosen = 0;
        for c in candidates {
            if chosen == config.sc_connectivity {
                break;
            }
            if reaches(&net, f, c) {
                continue;
            }
            net.entry(c).or_default().insert(f);
            chosen += 1;

            let func = program.function(f).expect("eligible");
            let id = ids.manifest();
            let n = config.guard_sizes.sc.max(1);
            let guards = ids.guards(id, &guard_ops(OPS, n), Some(3.min(n - 1)));
            let placeholder = guards
                .iter()
                .find(|g| g.placeholder)
                .map(|g| g.instruction.id);
            out.push(Manifest {
                id,
                kind: ManifestKind::SC,
                placement_block: coldest_block(program, c).expect("eligible"),
                guard_instructions: guards,
                protected_instruction_ids: func
                    .code_blocks()
                    .flat_map(|b| b.instructions.iter().map(|i| i.id))
                    .collect(),
                protected_block_ids: func.code_blocks().map(|b| b.id).collect(),
                constraints: vec![
                    Constraint::Order {
                        before: NodeRef::Function(f),
                        after: NodeRef::Manifest(id),
                    },
                    Constraint::Present {
                        dependent: id,
                        required: vec![NodeRef::Function(f)],
                        min_count: 1,
                    },
                    Constraint::Preserve {
                        instructions: placeholder.into_iter().collect(),
                    },
                ],
                cost: 0.0,
                hash_variable: None,
                mobilizes: None,
            });
        }
    }
    out.sort_by_key(|m| m.id);
    out
}
