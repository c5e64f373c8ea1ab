//! Program IR: functions, basic blocks and instructions with profile counts.
//!
//! Programs arrive as JSON (see [`ProgramModel::from_json`]) or are produced by
//! the seeded generator. After protection manifests are applied, blocks carry
//! `guards` and functions may be flagged `mobilized`; the same types describe
//! both plain and protected programs.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::passes::ManifestId;

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(FunctionId, "F");
id_type!(BlockId, "B");
id_type!(InstrId, "i");

/// Opcode marking an instruction as a global variable definition.
pub const GLOBAL_OPCODE: &str = "global";

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramModel {
    pub name: String,
    pub functions: Vec<Function>,
    /// `(caller instruction, callee function)` pairs.
    #[serde(default)]
    pub call_edges: Vec<(InstrId, FunctionId)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Function {
    pub id: FunctionId,
    pub name: String,
    pub sensitive: bool,
    pub entry_block: BlockId,
    pub blocks: Vec<BasicBlock>,
    /// Set once a code-mobility manifest moved this function out of the static image.
    #[serde(default, skip_serializing_if = "is_false")]
    pub mobilized: bool,
    /// Set once an applied guard relies on this function staying in the static image.
    #[serde(default, skip_serializing_if = "is_false")]
    pub pinned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasicBlock {
    pub id: BlockId,
    pub exec_freq: f64,
    pub instructions: Vec<Instruction>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub guards: Vec<Guard>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instruction {
    pub id: InstrId,
    pub opcode: String,
    pub size_bytes: u32,
    pub deterministic: bool,
    pub is_branch_condition: bool,
    pub is_constant_data: bool,
}

/// A synthetic instruction injected by a protection manifest.
///
/// `placeholder` marks the slot that receives the expected hash during
/// finalization; `value` holds that hash (or a random token for call-stack
/// registers) and is zero until written.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Guard {
    pub owner: ManifestId,
    pub instruction: Instruction,
    #[serde(default, skip_serializing_if = "is_false")]
    pub placeholder: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub preserve: bool,
    #[serde(default)]
    pub value: u64,
}

impl BasicBlock {
    /// A block holding only global variable definitions.
    pub fn is_globals(&self) -> bool {
        !self.instructions.is_empty() && self.instructions.iter().all(|i| i.opcode == GLOBAL_OPCODE)
    }

    pub fn is_deterministic(&self) -> bool {
        self.instructions.iter().all(|i| i.deterministic)
    }
}

impl Function {
    pub fn code_blocks(&self) -> impl Iterator<Item = &BasicBlock> {
        self.blocks.iter().filter(|b| !b.is_globals())
    }

    pub fn block(&self, id: BlockId) -> Option<&BasicBlock> {
        self.blocks.iter().find(|b| b.id == id)
    }
}

/// Either a plain program instruction or an injected guard.
#[derive(Debug, Clone, Copy)]
pub enum InstrRef<'a> {
    Program(&'a Instruction),
    Guard(&'a Guard),
}

impl<'a> InstrRef<'a> {
    pub fn instruction(&self) -> &'a Instruction {
        match self {
            InstrRef::Program(i) => i,
            InstrRef::Guard(g) => &g.instruction,
        }
    }
}

impl ProgramModel {
    pub fn empty(name: impl Into<String>) -> Self {
        ProgramModel {
            name: name.into(),
            functions: Vec::new(),
            call_edges: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let program: ProgramModel =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        program.validate()?;
        Ok(program)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut fids = HashSet::new();
        let mut bids = HashSet::new();
        let mut iids = HashSet::new();
        for f in &self.functions {
            if !fids.insert(f.id) {
                return Err(Error::Validation(format!("duplicate function id {}", f.id)));
            }
            if f.blocks.is_empty() {
                return Err(Error::Validation(format!(
                    "function {} has no blocks",
                    f.id
                )));
            }
            if f.block(f.entry_block).is_none() {
                return Err(Error::Validation(format!(
                    "entry block {} does not belong to function {}",
                    f.entry_block, f.id
                )));
            }
            for b in &f.blocks {
                if !bids.insert(b.id) {
                    return Err(Error::Validation(format!("duplicate block id {}", b.id)));
                }
                if !(b.exec_freq.is_finite() && b.exec_freq >= 0.0) {
                    return Err(Error::Validation(format!(
                        "block {} has invalid exec_freq {}",
                        b.id, b.exec_freq
                    )));
                }
                let all = b
                    .instructions
                    .iter()
                    .chain(b.guards.iter().map(|g| &g.instruction));
                for i in all {
                    if !iids.insert(i.id) {
                        return Err(Error::Validation(format!(
                            "duplicate instruction id {}",
                            i.id
                        )));
                    }
                    if i.size_bytes == 0 {
                        return Err(Error::Validation(format!(
                            "instruction {} has size_bytes 0",
                            i.id
                        )));
                    }
                }
            }
        }
        for (inst, callee) in &self.call_edges {
            if !iids.contains(inst) {
                return Err(Error::Validation(format!(
                    "call edge references missing instruction {inst}"
                )));
            }
            if !fids.contains(callee) {
                return Err(Error::Validation(format!(
                    "call edge references missing function {callee}"
                )));
            }
        }
        Ok(())
    }

    pub fn function(&self, id: FunctionId) -> Option<&Function> {
        self.functions.iter().find(|f| f.id == id)
    }

    pub fn function_mut(&mut self, id: FunctionId) -> Option<&mut Function> {
        self.functions.iter_mut().find(|f| f.id == id)
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&Function, &BasicBlock)> {
        self.functions
            .iter()
            .flat_map(|f| f.blocks.iter().map(move |b| (f, b)))
    }

    pub fn block(&self, id: BlockId) -> Option<&BasicBlock> {
        self.blocks().find(|(_, b)| b.id == id).map(|(_, b)| b)
    }

    pub fn block_mut(&mut self, id: BlockId) -> Option<&mut BasicBlock> {
        self.functions
            .iter_mut()
            .flat_map(|f| f.blocks.iter_mut())
            .find(|b| b.id == id)
    }

    pub fn function_of_block(&self, id: BlockId) -> Option<FunctionId> {
        self.blocks().find(|(_, b)| b.id == id).map(|(f, _)| f.id)
    }

    /// Every program instruction (guards excluded), in layout order.
    pub fn instructions(&self) -> impl Iterator<Item = (&Function, &BasicBlock, &Instruction)> {
        self.blocks()
            .flat_map(|(f, b)| b.instructions.iter().map(move |i| (f, b, i)))
    }

    /// Program instructions and guards, in layout order.
    pub fn all_instructions(&self) -> impl Iterator<Item = (BlockId, InstrRef<'_>)> {
        self.blocks().flat_map(|(_, b)| {
            b.instructions
                .iter()
                .map(move |i| (b.id, InstrRef::Program(i)))
                .chain(b.guards.iter().map(move |g| (b.id, InstrRef::Guard(g))))
        })
    }

    pub fn find_instruction(&self, id: InstrId) -> Option<(BlockId, InstrRef<'_>)> {
        self.all_instructions()
            .find(|(_, r)| r.instruction().id == id)
    }

    pub fn max_instruction_id(&self) -> Option<u32> {
        self.all_instructions()
            .map(|(_, r)| r.instruction().id.0)
            .max()
    }

    pub fn max_block_id(&self) -> Option<u32> {
        self.blocks().map(|(_, b)| b.id.0).max()
    }

    /// Profile count of `block` divided by the largest count in the program.
    pub fn normalized_freq(&self, block: BlockId) -> Result<f64> {
        let b = self.block(block).ok_or(Error::UnknownBlock(block))?;
        let max = self
            .blocks()
            .map(|(_, b)| b.exec_freq)
            .fold(0.0_f64, f64::max);
        if max <= 0.0 {
            return Ok(0.0);
        }
        Ok(b.exec_freq / max)
    }

    /// Callee functions per caller function, derived from call edges.
    pub fn call_graph(&self) -> BTreeMap<FunctionId, BTreeSet<FunctionId>> {
        let owner: BTreeMap<InstrId, FunctionId> =
            self.instructions().map(|(f, _, i)| (i.id, f.id)).collect();
        let mut graph: BTreeMap<FunctionId, BTreeSet<FunctionId>> = self
            .functions
            .iter()
            .map(|f| (f.id, BTreeSet::new()))
            .collect();
        for (inst, callee) in &self.call_edges {
            if let Some(caller) = owner.get(inst) {
                graph.entry(*caller).or_default().insert(*callee);
            }
        }
        graph
    }

    /// Length of the shortest call chain from a root (a function nobody calls,
    /// or the first function when every function has a caller).
    pub fn call_depths(&self) -> BTreeMap<FunctionId, usize> {
        let graph = self.call_graph();
        let called: BTreeSet<FunctionId> = graph.values().flatten().copied().collect();
        let mut roots: Vec<FunctionId> = self
            .functions
            .iter()
            .map(|f| f.id)
            .filter(|f| !called.contains(f))
            .collect();
        if roots.is_empty() {
            roots.extend(self.functions.first().map(|f| f.id));
        }
        let mut depth = BTreeMap::new();
        let mut queue: std::collections::VecDeque<FunctionId> = roots.into_iter().collect();
        for r in &queue {
            depth.insert(*r, 0);
        }
        while let Some(f) = queue.pop_front() {
            let d = depth[&f];
            for callee in graph.get(&f).into_iter().flatten() {
                if !depth.contains_key(callee) {
                    depth.insert(*callee, d + 1);
                    queue.push_back(*callee);
                }
            }
        }
        for f in &self.functions {
            depth.entry(f.id).or_insert(0);
        }
        depth
    }
}

pub fn load_program(path: impl AsRef<Path>) -> Result<ProgramModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    ProgramModel::from_json(&text)
}

pub fn save_program(program: &ProgramModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, program.to_json()).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

const DET_OPCODES: &[&str] = &["add", "sub", "mul", "xor", "shl", "load", "store"];
const NONDET_OPCODES: &[&str] = &["load", "store", "select", "getelementptr", "phi"];

/// Seeded synthetic program.
///
/// Every function after the first is called from a lower-numbered function, so
/// the call graph is a DAG reachable from function 0. Exactly
/// `round(det_ratio * N)` instructions are deterministic; inside each block
/// deterministic instructions form a prefix.
pub fn generate_program(
    seed: u64,
    n_functions: usize,
    mean_blocks: usize,
    det_ratio: f64,
) -> ProgramModel {
    assert!(
        n_functions >= 1 && mean_blocks >= 1,
        "need at least one function and block"
    );
    let det_ratio = det_ratio.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_block = 0u32;
    let mut next_instr = 0u32;

    let mut functions = Vec::with_capacity(n_functions);
    for f in 0..n_functions {
        let n_blocks = rng.gen_range(1..=2 * mean_blocks - 1);
        let mut blocks = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let n_instr = rng.gen_range(2..=6);
            let instructions = (0..n_instr)
                .map(|_| {
                    let id = InstrId(next_instr);
                    next_instr += 1;
                    Instruction {
                        id,
                        opcode: String::new(),
                        size_bytes: rng.gen_range(1..=8),
                        deterministic: false,
                        is_branch_condition: false,
                        is_constant_data: false,
                    }
                })
                .collect();
            blocks.push(BasicBlock {
                id: BlockId(next_block),
                exec_freq: rng.gen_range(0..=1000) as f64,
                instructions,
                guards: Vec::new(),
            });
            next_block += 1;
        }
        let entry = blocks[0].id;
        functions.push(Function {
            id: FunctionId(f as u32),
            name: format!("f{f}"),
            sensitive: rng.gen_bool(0.3),
            entry_block: entry,
            blocks,
            mobilized: false,
            pinned: false,
        });
    }

    // Determinism: exact count, then deterministic prefix inside each block.
    let total: usize = functions
        .iter()
        .flat_map(|f| &f.blocks)
        .map(|b| b.instructions.len())
        .sum();
    let n_det = (det_ratio * total as f64).round() as usize;
    let mut flags: Vec<bool> = (0..total).map(|k| k < n_det).collect();
    flags.shuffle(&mut rng);
    let mut flags = flags.into_iter();
    for f in &mut functions {
        for b in &mut f.blocks {
            let mut det: Vec<bool> = b
                .instructions
                .iter()
                .map(|_| flags.next().unwrap())
                .collect();
            det.sort_by(|a, b| b.cmp(a));
            for (inst, d) in b.instructions.iter_mut().zip(det) {
                inst.deterministic = d;
            }
        }
    }

    for f in &mut functions {
        let last = f.blocks.len() - 1;
        for (bi, b) in f.blocks.iter_mut().enumerate() {
            let len = b.instructions.len();
            for (k, inst) in b.instructions.iter_mut().enumerate() {
                if bi != last && k == len - 1 && rng.gen_bool(0.6) {
                    inst.is_branch_condition = true;
                    inst.opcode = "icmp".into();
                } else if inst.deterministic {
                    inst.opcode = DET_OPCODES.choose(&mut rng).unwrap().to_string();
                } else {
                    inst.is_constant_data = rng.gen_bool(0.25);
                    inst.opcode = NONDET_OPCODES.choose(&mut rng).unwrap().to_string();
                }
            }
        }
    }

    // Call graph: a spanning tree rooted at function 0, each call site turning
    // an existing non-branch instruction of the caller into a call.
    let mut call_edges = Vec::new();
    let mut used_sites = HashSet::new();
    let free_sites = |f: &Function, used: &HashSet<InstrId>| -> Vec<InstrId> {
        f.blocks
            .iter()
            .flat_map(|b| &b.instructions)
            .filter(|i| !i.is_branch_condition && !used.contains(&i.id))
            .map(|i| i.id)
            .collect()
    };
    for callee in 1..n_functions {
        // every function has at least two non-branch instructions, so some
        // earlier function always has a free site
        let callers: Vec<usize> = (0..callee)
            .filter(|c| !free_sites(&functions[*c], &used_sites).is_empty())
            .collect();
        let caller = *callers.choose(&mut rng).expect("a caller with a free site");
        let sites = free_sites(&functions[caller], &used_sites);
        let site = *sites.choose(&mut rng).expect("non-empty");
        used_sites.insert(site);
        for inst in functions[caller]
            .blocks
            .iter_mut()
            .flat_map(|b| &mut b.instructions)
        {
            if inst.id == site {
                inst.opcode = "call".into();
                inst.is_constant_data = false;
            }
        }
        call_edges.push((site, FunctionId(callee as u32)));
    }

    ProgramModel {
        name: format!("synthetic-{seed}"),
        functions,
        call_edges,
    }
}
