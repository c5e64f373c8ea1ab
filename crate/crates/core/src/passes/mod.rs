//! Two-step protection transformations.
//!
//! Step one ([`propose`], [`propose_all`]) inspects a program and returns
//! [`Manifest`]s without touching it. Step two ([`apply`]) carries out one
//! manifest on demand and returns the transformed program.
//!
//! Passes run in the fixed order SC, OH, SROH, CSIV, CM, OBF. A later pass
//! sees the guard instructions proposed by earlier passes as if they had been
//! inserted, which is how OH ends up hashing SC guards.

mod cm;
mod csiv;
mod obf;
mod oh;
mod sc;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::program::{BlockId, FunctionId, Guard, InstrId, Instruction, ProgramModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ManifestId(pub u32);

impl fmt::Display for ManifestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ManifestKind {
    SC,
    OH_HASH,
    OH_VERIFY,
    SROH_HASH,
    SROH_VERIFY,
    CSIV_REGISTER,
    CSIV_VERIFY,
    CM,
    OBF,
}

impl ManifestKind {
    pub const ALL: [ManifestKind; 9] = [
        ManifestKind::SC,
        ManifestKind::OH_HASH,
        ManifestKind::OH_VERIFY,
        ManifestKind::SROH_HASH,
        ManifestKind::SROH_VERIFY,
        ManifestKind::CSIV_REGISTER,
        ManifestKind::CSIV_VERIFY,
        ManifestKind::CM,
        ManifestKind::OBF,
    ];

    pub fn pass(self) -> PassKind {
        match self {
            ManifestKind::SC => PassKind::SC,
            ManifestKind::OH_HASH | ManifestKind::OH_VERIFY => PassKind::OH,
            ManifestKind::SROH_HASH | ManifestKind::SROH_VERIFY => PassKind::SROH,
            ManifestKind::CSIV_REGISTER | ManifestKind::CSIV_VERIFY => PassKind::CSIV,
            ManifestKind::CM => PassKind::CM,
            ManifestKind::OBF => PassKind::OBF,
        }
    }

    /// Kinds that own a placeholder patched during finalization and run a check.
    pub fn is_checker(self) -> bool {
        matches!(
            self,
            ManifestKind::SC
                | ManifestKind::OH_VERIFY
                | ManifestKind::SROH_VERIFY
                | ManifestKind::CSIV_VERIFY
        )
    }
}

impl fmt::Display for ManifestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A protection pass. The derived ordering is the application order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PassKind {
    SC,
    OH,
    SROH,
    CSIV,
    CM,
    OBF,
}

impl PassKind {
    pub const ORDER: [PassKind; 6] = [
        PassKind::SC,
        PassKind::OH,
        PassKind::SROH,
        PassKind::CSIV,
        PassKind::CM,
        PassKind::OBF,
    ];

    /// Integrity passes enabled unless configured otherwise.
    pub const INTEGRITY: [PassKind; 4] =
        [PassKind::SC, PassKind::OH, PassKind::SROH, PassKind::CSIV];
}

impl fmt::Display for PassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for PassKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SC" => Ok(PassKind::SC),
            "OH" => Ok(PassKind::OH),
            "SROH" => Ok(PassKind::SROH),
            "CSIV" => Ok(PassKind::CSIV),
            "CM" => Ok(PassKind::CM),
            "OBF" => Ok(PassKind::OBF),
            _ => Err(Error::UnknownKind(s.to_string())),
        }
    }
}

/// A node of the defense graph, as referenced by constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRef {
    Manifest(ManifestId),
    Function(FunctionId),
    Instruction(InstrId),
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRef::Manifest(m) => write!(f, "{m}"),
            NodeRef::Function(x) => write!(f, "{x}"),
            NodeRef::Instruction(i) => write!(f, "{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Constraint {
    /// `after` can only be finalized once `before` holds its final bytes.
    Order { before: NodeRef, after: NodeRef },
    /// The listed instructions must keep their bytes until finalization.
    Preserve { instructions: Vec<InstrId> },
    /// `dependent` can only exist if at least `min_count` of `required` exist.
    Present {
        dependent: ManifestId,
        required: Vec<NodeRef>,
        min_count: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub id: ManifestId,
    pub kind: ManifestKind,
    pub placement_block: BlockId,
    pub guard_instructions: Vec<Guard>,
    pub protected_instruction_ids: BTreeSet<InstrId>,
    pub protected_block_ids: BTreeSet<BlockId>,
    pub constraints: Vec<Constraint>,
    pub cost: f64,
    /// Hash variable (OH/SROH) written by hash manifests and read by verifiers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash_variable: Option<InstrId>,
    /// Function a code-mobility manifest moves out of the static image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mobilizes: Option<FunctionId>,
}

impl Manifest {
    pub fn placeholder(&self) -> Option<&Guard> {
        self.guard_instructions.iter().find(|g| g.placeholder)
    }

    pub fn preserved(&self) -> BTreeSet<InstrId> {
        self.constraints
            .iter()
            .filter_map(|c| match c {
                Constraint::Preserve { instructions } => Some(instructions.iter().copied()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Functions this manifest needs to remain in the static image.
    pub fn required_functions(&self) -> Vec<FunctionId> {
        self.constraints
            .iter()
            .filter_map(|c| match c {
                Constraint::Present { required, .. } => Some(required.iter()),
                _ => None,
            })
            .flatten()
            .filter_map(|n| match n {
                NodeRef::Function(f) => Some(*f),
                _ => None,
            })
            .collect()
    }

    /// Manifests named by n-of-m presence constraints with `min_count < |required|`
    /// or a single-manifest requirement; for verifiers these are the guards they check.
    pub fn required_manifests(&self) -> Vec<ManifestId> {
        self.constraints
            .iter()
            .filter_map(|c| match c {
                Constraint::Present { required, .. } => Some(required.iter()),
                _ => None,
            })
            .flatten()
            .filter_map(|n| match n {
                NodeRef::Manifest(m) => Some(*m),
                _ => None,
            })
            .collect()
    }

    /// Manifests whose presence this checker's hash depends on: the hash
    /// manifests of an OH/SROH verifier or the registers of a CSIV verifier.
    pub fn checked_manifests(&self) -> Vec<ManifestId> {
        match self.kind {
            ManifestKind::OH_VERIFY | ManifestKind::SROH_VERIFY | ManifestKind::CSIV_VERIFY => {
                self.required_manifests()
            }
            _ => Vec::new(),
        }
    }

    /// Function whose code an SC manifest hashes.
    pub fn protected_function(&self) -> Option<FunctionId> {
        match self.kind {
            ManifestKind::SC => self.required_functions().first().copied(),
            _ => None,
        }
    }

    pub fn guard_ids(&self) -> impl Iterator<Item = InstrId> + '_ {
        self.guard_instructions.iter().map(|g| g.instruction.id)
    }
}

/// Guard sizes per manifest kind, in synthetic instructions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuardSizes {
    pub sc: usize,
    /// Guard instructions per hashed instruction (OH and SROH).
    pub hash_per_instruction: usize,
    pub verify: usize,
    pub csiv_register: usize,
    pub csiv_verify: usize,
    pub obf: usize,
}

impl Default for GuardSizes {
    fn default() -> Self {
        GuardSizes {
            sc: 8,
            hash_per_instruction: 1,
            verify: 3,
            csiv_register: 1,
            csiv_verify: 2,
            obf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassConfig {
    pub sc_connectivity: usize,
    pub enabled: BTreeSet<PassKind>,
    pub seed: u64,
    pub kind_weight: BTreeMap<ManifestKind, f64>,
    pub guard_sizes: GuardSizes,
}

impl Default for PassConfig {
    fn default() -> Self {
        PassConfig {
            sc_connectivity: 1,
            enabled: PassKind::INTEGRITY.into_iter().collect(),
            seed: 0,
            kind_weight: ManifestKind::ALL.iter().map(|k| (*k, 1.0)).collect(),
            guard_sizes: GuardSizes::default(),
        }
    }
}

impl PassConfig {
    pub fn with_passes(mut self, passes: impl IntoIterator<Item = PassKind>) -> Self {
        self.enabled = passes.into_iter().collect();
        self
    }

    pub fn weight(&self, kind: ManifestKind) -> f64 {
        self.kind_weight.get(&kind).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, w) in &self.kind_weight {
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::Validation(format!(
                    "kind weight for {k} must be > 0"
                )));
            }
        }
        Ok(())
    }
}

/// Estimated overhead of a manifest: kind weight, scaled by the hotness of the
/// placement block and the number of guard instructions (at least one).
pub fn cost_model(
    program: &ProgramModel,
    config: &PassConfig,
    kind: ManifestKind,
    placement: BlockId,
    guard_count: usize,
) -> f64 {
    let hot = program.normalized_freq(placement).unwrap_or(0.0);
    config.weight(kind) * (1.0 + hot) * guard_count.max(1) as f64
}

/// Fresh manifest and instruction ids.
#[derive(Debug, Clone)]
pub(crate) struct IdAlloc {
    next_manifest: u32,
    next_instr: u32,
}

impl IdAlloc {
    fn new(program: &ProgramModel) -> Self {
        IdAlloc {
            next_manifest: 1,
            next_instr: program.max_instruction_id().map_or(0, |m| m + 1),
        }
    }

    fn manifest(&mut self) -> ManifestId {
        let id = ManifestId(self.next_manifest);
        self.next_manifest += 1;
        id
    }

    /// Id the next call to [`IdAlloc::manifest`] would return, `ahead` calls later.
    fn peek_manifest(&self, ahead: u32) -> ManifestId {
        ManifestId(self.next_manifest + ahead)
    }

    fn instr(&mut self) -> InstrId {
        let id = InstrId(self.next_instr);
        self.next_instr += 1;
        id
    }

    fn guards(
        &mut self,
        owner: ManifestId,
        ops: &[&str],
        placeholder_at: Option<usize>,
    ) -> Vec<Guard> {
        ops.iter()
            .enumerate()
            .map(|(k, op)| Guard {
                owner,
                instruction: Instruction {
                    id: self.instr(),
                    opcode: op.to_string(),
                    size_bytes: if Some(k) == placeholder_at { 8 } else { 4 },
                    deterministic: true,
                    is_branch_condition: false,
                    is_constant_data: false,
                },
                placeholder: Some(k) == placeholder_at,
                preserve: false,
                value: 0,
            })
            .collect()
    }
}

/// `n` opcodes cycling through `template`.
fn guard_ops<'a>(template: &[&'a str], n: usize) -> Vec<&'a str> {
    template.iter().copied().cycle().take(n).collect()
}

/// A program together with the guards proposed by earlier passes, laid out as
/// if already inserted at the end of their placement blocks.
pub(crate) struct Staging<'a> {
    pub program: &'a ProgramModel,
    pub earlier: &'a [Manifest],
}

impl<'a> Staging<'a> {
    /// Guards placed in `block`, grouped by owner in id order.
    pub fn guard_groups(&self, block: BlockId) -> Vec<(ManifestId, Vec<&'a Guard>)> {
        let mut groups: Vec<(ManifestId, Vec<&'a Guard>)> = self
            .earlier
            .iter()
            .filter(|m| m.placement_block == block && !m.guard_instructions.is_empty())
            .map(|m| (m.id, m.guard_instructions.iter().collect()))
            .collect();
        groups.sort_by_key(|(id, _)| *id);
        groups
    }
}

/// Coldest non-globals block of a function; ties go to the lowest block id.
pub(crate) fn coldest_block(program: &ProgramModel, function: FunctionId) -> Option<BlockId> {
    program
        .function(function)?
        .code_blocks()
        .min_by(|a, b| a.exec_freq.total_cmp(&b.exec_freq).then(a.id.cmp(&b.id)))
        .map(|b| b.id)
}

/// Proposals of a single pass run in isolation.
pub fn propose(
    kind: PassKind,
    program: &ProgramModel,
    config: &PassConfig,
) -> Result<Vec<Manifest>> {
    if !config.enabled.contains(&kind) {
        return Err(Error::DisabledPass(match kind {
            PassKind::SC => ManifestKind::SC,
            PassKind::OH => ManifestKind::OH_HASH,
            PassKind::SROH => ManifestKind::SROH_HASH,
            PassKind::CSIV => ManifestKind::CSIV_REGISTER,
            PassKind::CM => ManifestKind::CM,
            PassKind::OBF => ManifestKind::OBF,
        }));
    }
    config.validate()?;
    let mut ids = IdAlloc::new(program);
    Ok(run_pass(kind, program, config, &[], &mut ids))
}

/// Proposals of every enabled pass, in application order.
pub fn propose_all(program: &ProgramModel, config: &PassConfig) -> Result<Vec<Manifest>> {
    config.validate()?;
    let mut ids = IdAlloc::new(program);
    let mut all: Vec<Manifest> = Vec::new();
    for kind in PassKind::ORDER {
        if config.enabled.contains(&kind) {
            let new = run_pass(kind, program, config, &all, &mut ids);
            all.extend(new);
        }
    }
    Ok(all)
}

fn run_pass(
    kind: PassKind,
    program: &ProgramModel,
    config: &PassConfig,
    earlier: &[Manifest],
    ids: &mut IdAlloc,
) -> Vec<Manifest> {
    let staging = Staging { program, earlier };
    let mut out = match kind {
        PassKind::SC => sc::propose(program, config, ids),
        PassKind::OH => oh::propose_oh(&staging, config, ids),
        PassKind::SROH => oh::propose_sroh(&staging, config, ids),
        PassKind::CSIV => csiv::propose(program, config, ids),
        PassKind::CM => cm::propose(program, config, ids),
        PassKind::OBF => obf::propose(program, config, ids),
    };
    for m in &mut out {
        m.cost = cost_model(
            program,
            config,
            m.kind,
            m.placement_block,
            m.guard_instructions.len(),
        );
    }
    out
}

/// Token written into a call-stack register guard when it is applied.
pub fn register_token(id: ManifestId) -> u64 {
    crate::composer::fnv1a(&[b"csiv-token", &id.0.to_le_bytes()])
}

/// Carry out one manifest on a copy of `program`.
pub fn apply(manifest: &Manifest, program: &ProgramModel) -> Result<ProgramModel> {
    let stale = |detail: String| Error::StaleManifest {
        manifest: manifest.id,
        detail,
    };
    if program.block(manifest.placement_block).is_none() {
        return Err(stale(format!(
            "placement block {} missing",
            manifest.placement_block
        )));
    }
    for g in manifest.guard_ids() {
        if program.find_instruction(g).is_some() {
            return Err(stale(format!("guard {g} already present")));
        }
    }
    let exists = |id: InstrId| program.find_instruction(id).is_some();
    for i in &manifest.protected_instruction_ids {
        if !exists(*i) {
            return Err(stale(format!("protected instruction {i} missing")));
        }
    }
    for b in &manifest.protected_block_ids {
        if program.block(*b).is_none() {
            return Err(stale(format!("protected block {b} missing")));
        }
    }
    // Order arcs to nodes that are gone constrain nothing; presence does.
    for c in &manifest.constraints {
        let Constraint::Present { required, .. } = c else {
            continue;
        };
        for n in required {
            match n {
                NodeRef::Instruction(i) if Some(*i) != manifest.hash_variable && !exists(*i) => {
                    return Err(stale(format!("required instruction {i} missing")));
                }
                NodeRef::Function(f) if program.function(*f).is_none() => {
                    return Err(stale(format!("required function {f} missing")));
                }
                _ => {}
            }
        }
    }

    let mut out = program.clone();
    match manifest.kind {
        ManifestKind::SC => {
            for f in manifest.required_functions() {
                let func = out.function_mut(f).expect("checked above");
                if func.mobilized {
                    return Err(Error::PresenceViolation {
                        manifest: manifest.id,
                        function: f,
                    });
                }
                func.pinned = true;
            }
        }
        ManifestKind::CM => {
            let f = manifest
                .mobilizes
                .ok_or_else(|| stale("code mobility manifest without target".into()))?;
            let func = out
                .function_mut(f)
                .ok_or_else(|| stale(format!("function {f} missing")))?;
            if func.pinned {
                return Err(Error::PresenceViolation {
                    manifest: manifest.id,
                    function: f,
                });
            }
            func.mobilized = true;
        }
        ManifestKind::OBF => {
            let f = out
                .function_of_block(manifest.placement_block)
                .expect("placement checked");
            obf::rewrite(out.function_mut(f).expect("function exists"));
        }
        _ => {}
    }

    let preserved = manifest.preserved();
    let block = out
        .block_mut(manifest.placement_block)
        .expect("placement checked");
    for g in &manifest.guard_instructions {
        let mut g = g.clone();
        g.owner = manifest.id;
        g.preserve = preserved.contains(&g.instruction.id);
        if manifest.kind == ManifestKind::CSIV_REGISTER {
            g.value = register_token(manifest.id);
        }
        block.guards.push(g);
    }
    Ok(out)
}
