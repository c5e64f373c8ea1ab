//! Oblivious hashing (OH) and short-range oblivious hashing (SROH).
//!
//! Both split into hash manifests, which fold instruction values into a hash
//! variable, and verify manifests, which compare the variable against an
//! expected value patched in at finalization.

use std::collections::BTreeSet;

use super::{
    coldest_block, guard_ops, Constraint, IdAlloc, Manifest, ManifestKind, NodeRef, PassConfig,
    Staging,
};
use crate::program::{BlockId, FunctionId, InstrId, Instruction};

struct Run {
    block: BlockId,
    function: FunctionId,
    instrs: Vec<InstrId>,
    owner: Option<super::ManifestId>,
}

fn det_runs<'a>(instrs: impl Iterator<Item = &'a Instruction>) -> Vec<Vec<InstrId>> {
    let mut runs = Vec::new();
    let mut cur = Vec::new();
    for i in instrs {
        if i.deterministic {
            cur.push(i.id);
        } else if !cur.is_empty() {
            runs.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        runs.push(cur);
    }
    runs
}

struct Family {
    kind_hash: ManifestKind,
    kind_verify: ManifestKind,
    hash_op: &'static str,
    verify_ops: &'static [&'static str],
}

const OH: Family = Family {
    kind_hash: ManifestKind::OH_HASH,
    kind_verify: ManifestKind::OH_VERIFY,
    hash_op: "oh.hash",
    verify_ops: &["oh.load_var", "oh.expected", "oh.verify"],
};

const SROH: Family = Family {
    kind_hash: ManifestKind::SROH_HASH,
    kind_verify: ManifestKind::SROH_VERIFY,
    hash_op: "sroh.hash",
    verify_ops: &["sroh.load_var", "sroh.expected", "sroh.verify"],
};

/// Hash manifests for `runs` into a fresh variable, then one verifier placed
/// in `verify_block`.
fn emit(
    family: &Family,
    runs: &[Run],
    verify_block: BlockId,
    config: &PassConfig,
    ids: &mut IdAlloc,
) -> Vec<Manifest> {
    let var = ids.instr();
    let verify_id = ids.peek_manifest(runs.len() as u32);
    let mut out = Vec::with_capacity(runs.len() + 1);
    for run in runs {
        let id = ids.manifest();
        let n = run.instrs.len() * config.guard_sizes.hash_per_instruction.max(1);
        let guards = ids.guards(id, &vec![family.hash_op; n], None);
        let mut constraints: Vec<Constraint> = run
            .instrs
            .iter()
            .map(|x| Constraint::Order {
                before: NodeRef::Instruction(*x),
                after: NodeRef::Instruction(var),
            })
            .collect();
        constraints.push(Constraint::Present {
            dependent: id,
            required: vec![NodeRef::Manifest(verify_id)],
            min_count: 1,
        });
        if let Some(owner) = run.owner {
            constraints.push(Constraint::Present {
                dependent: id,
                required: vec![NodeRef::Manifest(owner)],
                min_count: 1,
            });
        }
        out.push(Manifest {
            id,
            kind: family.kind_hash,
            placement_block: run.block,
            guard_instructions: guards,
            protected_instruction_ids: run.instrs.iter().copied().collect(),
            protected_block_ids: BTreeSet::from([run.block]),
            constraints,
            cost: 0.0,
            hash_variable: Some(var),
            mobilizes: None,
        });
    }

    let id = ids.manifest();
    debug_assert_eq!(id, verify_id);
    let n = config.guard_sizes.verify.max(1);
    let guards = ids.guards(id, &guard_ops(family.verify_ops, n), Some(1.min(n - 1)));
    let placeholder = guards
        .iter()
        .find(|g| g.placeholder)
        .map(|g| g.instruction.id);
    let hashed: BTreeSet<InstrId> = runs.iter().flat_map(|r| r.instrs.iter().copied()).collect();
    let mut constraints = vec![Constraint::Order {
        before: NodeRef::Instruction(var),
        after: NodeRef::Manifest(id),
    }];
    constraints.extend(hashed.iter().map(|x| Constraint::Order {
        before: NodeRef::Instruction(*x),
        after: NodeRef::Manifest(id),
    }));
    constraints.push(Constraint::Present {
        dependent: id,
        required: out.iter().map(|h| NodeRef::Manifest(h.id)).collect(),
        min_count: 1,
    });
    constraints.push(Constraint::Preserve {
        instructions: placeholder.into_iter().collect(),
    });
    out.push(Manifest {
        id,
        kind: family.kind_verify,
        placement_block: verify_block,
        guard_instructions: guards,
        protected_instruction_ids: BTreeSet::new(),
        protected_block_ids: BTreeSet::new(),
        constraints,
        cost: 0.0,
        hash_variable: Some(var),
        mobilizes: None,
    });
    out
}

/// One hash manifest per maximal deterministic run, never mixing program code
/// with guards or guards of different owners; a single program-wide variable
/// and verifier.
pub(super) fn propose_oh(st: &Staging, config: &PassConfig, ids: &mut IdAlloc) -> Vec<Manifest> {
    let mut runs = Vec::new();
    for f in st.program.functions.iter().filter(|f| !f.mobilized) {
        for b in f.code_blocks() {
            for instrs in det_runs(b.instructions.iter()) {
                runs.push(Run {
                    block: b.id,
                    function: f.id,
                    instrs,
                    owner: None,
                });
            }
            for (owner, guards) in st.guard_groups(b.id) {
                for instrs in det_runs(guards.iter().map(|g| &g.instruction)) {
                    runs.push(Run {
                        block: b.id,
                        function: f.id,
                        instrs,
                        owner: Some(owner),
                    });
                }
            }
        }
    }
    if runs.is_empty() {
        return Vec::new();
    }
    let depths = st.program.call_depths();
    let host = runs
        .iter()
        .map(|r| r.function)
        .max_by_key(|f| (depths[f], *f))
        .expect("non-empty");
    let block = coldest_block(st.program, host).expect("host has code");
    emit(&OH, &runs, block, config, ids)
}

/// Per function: one hash manifest per block holding branch conditions or
/// constant data of a nondeterministic block, all feeding a function-local
/// variable checked by one verifier.
pub(super) fn propose_sroh(st: &Staging, config: &PassConfig, ids: &mut IdAlloc) -> Vec<Manifest> {
    let mut out = Vec::new();
    for f in st.program.functions.iter().filter(|f| !f.mobilized) {
        let runs: Vec<Run> = f
            .code_blocks()
            .filter_map(|b| {
                let nondet = !b.is_deterministic();
                let instrs: Vec<InstrId> = b
                    .instructions
                    .iter()
                    .filter(|i| {
                        i.is_branch_condition || (nondet && i.is_constant_data && !i.deterministic)
                    })
                    .map(|i| i.id)
                    .collect();
                (!instrs.is_empty()).then_some(Run {
                    block: b.id,
                    function: f.id,
                    instrs,
                    owner: None,
                })
            })
            .collect();
        if runs.is_empty() {
            continue;
        }
        let block = coldest_block(st.program, f.id).expect("function has code");
        out.extend(emit(&SROH, &runs, block, config, ids));
    }
    out
}
