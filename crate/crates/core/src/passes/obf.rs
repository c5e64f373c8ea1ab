//! Opcode-rewriting obfuscation. Only its interaction with preserved bytes is
//! modelled.

use super::{coldest_block, IdAlloc, Manifest, ManifestKind, PassConfig};
use crate::program::{Function, ProgramModel};

pub(super) fn propose(
    program: &ProgramModel,
    config: &PassConfig,
    ids: &mut IdAlloc,
) -> Vec<Manifest> {
    let mut out = Vec::new();
    for f in &program.functions {
        let Some(block) = coldest_block(program, f.id) else {
            continue;
        };
        let id = ids.manifest();
        let ops = vec!["obf.opaque"; config.guard_sizes.obf.max(1)];
        let mut guards = ids.guards(id, &ops, None);
        for g in &mut guards {
            g.instruction.deterministic = false;
        }
        out.push(Manifest {
            id,
            kind: ManifestKind::OBF,
            placement_block: block,
            guard_instructions: guards,
            protected_instruction_ids: Default::default(),
            protected_block_ids: Default::default(),
            constraints: Vec::new(),
            cost: 0.0,
            hash_variable: None,
            mobilizes: None,
        });
    }
    out
}

fn obfuscate(opcode: &mut String) {
    if !opcode.starts_with("obf.") {
        *opcode = format!("obf.{opcode}");
    }
}

/// Rewrite every opcode in `function` except preserved guards.
pub(super) fn rewrite(function: &mut Function) {
    for b in function.blocks.iter_mut().filter(|b| !b.is_globals()) {
        for i in &mut b.instructions {
            obfuscate(&mut i.opcode);
        }
        for g in b.guards.iter_mut().filter(|g| !g.preserve) {
            obfuscate(&mut g.instruction.opcode);
        }
    }
}
