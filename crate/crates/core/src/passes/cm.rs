//! Code mobility: move a function body out of the static image.

use super::{IdAlloc, Manifest, ManifestKind, PassConfig};
use crate::program::ProgramModel;

pub(super) fn propose(
    program: &ProgramModel,
    _config: &PassConfig,
    ids: &mut IdAlloc,
) -> Vec<Manifest> {
    let depths = program.call_depths();
    program
        .functions
        .iter()
        .filter(|f| depths[&f.id] > 0 && !f.mobilized)
        .map(|f| Manifest {
            id: ids.manifest(),
            kind: ManifestKind::CM,
            placement_block: f.entry_block,
            guard_instructions: Vec::new(),
            protected_instruction_ids: Default::default(),
            protected_block_ids: Default::default(),
            constraints: Vec::new(),
            cost: 0.0,
            hash_variable: None,
            mobilizes: Some(f.id),
        })
        .collect()
}
