//! End-to-end composition: propose, detect conflicts, select, apply, finalize.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph, find_cycles, Cycle, DefenseGraph};
use crate::ilp::{
    build_model, solve, IlpModel, Metric, ModelOptions, Requirement, Sense, Solution, Status,
};
use crate::metrics::{selection_metrics, MetricsReport};
use crate::passes::{
    apply, propose_all, Constraint, Manifest, ManifestId, ManifestKind, NodeRef, PassConfig,
    PassKind,
};
use crate::program::{FunctionId, Guard, InstrId, InstrRef, ProgramModel};

pub use crate::passes::cost_model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompositionConfig {
    pub two_phase: bool,
    pub requirements: Vec<Requirement>,
    /// Enabled passes; they always run in the order SC, OH, SROH, CSIV, CM, OBF.
    pub passes: Vec<String>,
    pub sc_connectivity: usize,
    pub seed: u64,
    pub time_limit_s: f64,
    pub max_iterations: usize,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        CompositionConfig {
            two_phase: true,
            requirements: Vec::new(),
            passes: PassKind::INTEGRITY.iter().map(|p| p.to_string()).collect(),
            sc_connectivity: 1,
            seed: 0,
            time_limit_s: 60.0,
            max_iterations: 50,
        }
    }
}

impl CompositionConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: CompositionConfig =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.enabled_passes()?;
        if self.max_iterations == 0 {
            return Err(Error::Validation("max_iterations must be >= 1".into()));
        }
        if !(self.time_limit_s.is_finite() && self.time_limit_s > 0.0) {
            return Err(Error::Validation("time_limit_s must be > 0".into()));
        }
        for r in &self.requirements {
            if !(r.value.is_finite() && r.value >= 0.0) {
                return Err(Error::Validation(format!(
                    "requirement value {} must be >= 0",
                    r.value
                )));
            }
        }
        Ok(())
    }

    pub fn enabled_passes(&self) -> Result<BTreeSet<PassKind>> {
        self.passes.iter().map(|p| p.parse()).collect()
    }

    pub fn pass_config(&self) -> Result<PassConfig> {
        Ok(PassConfig {
            sc_connectivity: self.sc_connectivity,
            enabled: self.enabled_passes()?,
            seed: self.seed,
            ..PassConfig::default()
        })
    }

    pub fn time_limit(&self) -> Duration {
        Duration::from_secs_f64(self.time_limit_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    MinimizeCost,
    /// Σ (instruction + block coverage) over explicit and implicit terms.
    MaximizeCoverage,
}

#[derive(Debug, Clone)]
pub struct SelectionRequest<'a> {
    pub graph: &'a DefenseGraph,
    pub manifests: &'a [Manifest],
    pub cycles: Vec<Cycle>,
    pub requirements: Vec<Requirement>,
    pub objective: Objective,
    pub time_limit: Duration,
    pub max_iterations: usize,
    pub options: ModelOptions,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub selected: BTreeSet<ManifestId>,
    /// Number of solves performed.
    pub iterations: usize,
    pub objective: f64,
    /// Every cycle constraint in the final model.
    pub cycles: Vec<Cycle>,
    pub model: IlpModel,
    pub solution: Solution,
}

fn model_for(req: &SelectionRequest, cycles: &[Cycle]) -> Result<IlpModel> {
    let costs: BTreeMap<ManifestId, f64> = req.manifests.iter().map(|m| (m.id, m.cost)).collect();
    let mut model = build_model(
        req.graph,
        req.manifests,
        cycles,
        &req.requirements,
        &costs,
        req.options,
    )?;
    if req.objective == Objective::MaximizeCoverage {
        let mut weights: BTreeMap<usize, f64> = BTreeMap::new();
        for metric in [
            Metric::ExplicitInstructions,
            Metric::ExplicitBlocks,
            Metric::ImplicitInstructions,
            Metric::ImplicitBlocks,
        ] {
            for (v, c) in model.metric_terms(metric, req.manifests) {
                *weights.entry(v).or_default() += c;
            }
        }
        model.set_objective(weights.into_iter().collect(), Sense::Maximize);
    }
    Ok(model)
}

/// Solve, look for cycles left among the selected manifests, add them as
/// constraints and solve again until the selection is acyclic.
pub fn select_manifests(req: SelectionRequest) -> Result<Selection> {
    let mut cycles = req.cycles.clone();
    for iteration in 1..=req.max_iterations {
        let model = model_for(&req, &cycles)?;
        let solution = solve(&model, req.time_limit);
        let values = match (&solution.status, &solution.values) {
            (Status::Infeasible, _) => return Err(Error::InfeasibleRequirements),
            (_, None) => return Err(Error::SolverTimedOut),
            (_, Some(v)) => v.clone(),
        };
        let selected: BTreeSet<ManifestId> = model
            .manifest_vars()
            .into_iter()
            .filter(|(_, v)| values[*v])
            .map(|(m, _)| m)
            .collect();
        let residual: Vec<Cycle> = find_cycles(&req.graph.restrict(&selected))
            .into_iter()
            .filter(|c| !cycles.contains(c))
            .collect();
        if residual.is_empty() {
            // a residual cycle already constrained would mean the model is wrong
            if !find_cycles(&req.graph.restrict(&selected)).is_empty() {
                return Err(Error::FinalizationInconsistent(
                    "selected a constrained cycle".into(),
                ));
            }
            return Ok(Selection {
                selected,
                iterations: iteration,
                objective: solution.objective,
                cycles,
                model,
                solution,
            });
        }
        cycles.extend(residual);
    }
    Err(Error::IterationLimitExceeded(req.max_iterations))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PatchState {
    pub slots: BTreeMap<ManifestId, u64>,
    pub finalized: Vec<ManifestId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseRecord {
    pub objective: f64,
    pub selected: Vec<ManifestId>,
    pub cost: f64,
    pub iterations: usize,
    pub explicit_instructions: f64,
    pub explicit_blocks: f64,
    pub implicit_instructions: f64,
    pub implicit_blocks: f64,
}

impl PhaseRecord {
    pub fn requirements(&self) -> Vec<Requirement> {
        vec![
            Requirement::at_least(Metric::ExplicitInstructions, self.explicit_instructions),
            Requirement::at_least(Metric::ExplicitBlocks, self.explicit_blocks),
            Requirement::at_least(Metric::ImplicitInstructions, self.implicit_instructions),
            Requirement::at_least(Metric::ImplicitBlocks, self.implicit_blocks),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct CompositionResult {
    pub proposed: Vec<Manifest>,
    pub selected: Vec<Manifest>,
    /// Applied and finalized program.
    pub protected_program: ProgramModel,
    pub finalization_order: Vec<ManifestId>,
    pub metrics: MetricsReport,
    pub iterations_used: usize,
    pub objective_value: f64,
    /// Cycles of the full proposal graph.
    pub initial_cycles: Vec<Cycle>,
    /// Every cycle constraint added, including those found among selections.
    pub cycles: Vec<Cycle>,
    pub patch: PatchState,
    pub phase_a: Option<PhaseRecord>,
    pub graph: DefenseGraph,
    /// Final model and solution; absent for the heuristic baseline.
    pub solved: Option<(IlpModel, Solution)>,
}

impl CompositionResult {
    pub fn selected_ids(&self) -> BTreeSet<ManifestId> {
        self.selected.iter().map(|m| m.id).collect()
    }

    pub fn report(&self) -> Report {
        let selected = self.selected_ids();
        Report {
            program: self.protected_program.name.clone(),
            proposed: self.proposed.len(),
            selected: self
                .selected
                .iter()
                .map(|m| SelectedEntry {
                    id: m.id,
                    kind: m.kind,
                })
                .collect(),
            dropped: self
                .proposed
                .iter()
                .filter(|m| !selected.contains(&m.id))
                .map(|m| m.id)
                .collect(),
            cycles_broken: self
                .initial_cycles
                .iter()
                .map(|c| c.manifest_ids.clone())
                .collect(),
            cycle_constraints: self.cycles.iter().map(|c| c.manifest_ids.clone()).collect(),
            iterations: self.iterations_used,
            objective: self.objective_value,
            finalization_order: self.finalization_order.clone(),
            metrics: self.metrics.clone(),
            phase_a: self.phase_a.clone(),
            solver_status: self.solved.as_ref().map(|(_, s)| s.status),
            nodes_explored: self.solved.as_ref().map(|(_, s)| s.nodes_explored),
        }
    }

    pub fn protected_file(&self) -> ProtectedFile {
        ProtectedFile {
            name: self.protected_program.name.clone(),
            functions: self.protected_program.functions.clone(),
            call_edges: self.protected_program.call_edges.clone(),
            manifests: self.selected.clone(),
            finalization_order: self.finalization_order.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectedEntry {
    pub id: ManifestId,
    pub kind: ManifestKind,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub program: String,
    pub proposed: usize,
    pub selected: Vec<SelectedEntry>,
    pub dropped: Vec<ManifestId>,
    pub cycles_broken: Vec<Vec<ManifestId>>,
    pub cycle_constraints: Vec<Vec<ManifestId>>,
    pub iterations: usize,
    pub objective: f64,
    pub finalization_order: Vec<ManifestId>,
    pub metrics: MetricsReport,
    pub phase_a: Option<PhaseRecord>,
    pub solver_status: Option<Status>,
    pub nodes_explored: Option<u64>,
}

/// Protected program plus what is needed to re-finalize and tamper-test it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtectedFile {
    pub name: String,
    pub functions: Vec<crate::program::Function>,
    pub call_edges: Vec<(InstrId, FunctionId)>,
    pub manifests: Vec<Manifest>,
    pub finalization_order: Vec<ManifestId>,
}

impl ProtectedFile {
    pub fn program(&self) -> ProgramModel {
        ProgramModel {
            name: self.name.clone(),
            functions: self.functions.clone(),
            call_edges: self.call_edges.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProtectedFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.program().validate()?;
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("protected file serializes")
    }
}

pub fn compose(program: &ProgramModel, config: &CompositionConfig) -> Result<CompositionResult> {
    config.validate()?;
    program.validate()?;
    let proposed = propose_all(program, &config.pass_config()?)?;
    let graph = build_graph(&proposed, program)?;
    let initial = find_cycles(&graph);
    let request =
        |cycles: Vec<Cycle>, requirements: Vec<Requirement>, objective| SelectionRequest {
            graph: &graph,
            manifests: &proposed,
            cycles,
            requirements,
            objective,
            time_limit: config.time_limit(),
            max_iterations: config.max_iterations,
            options: ModelOptions::default(),
        };

    let (selection, phase_a) = if config.two_phase {
        let a = select_manifests(request(
            initial.clone(),
            Vec::new(),
            Objective::MaximizeCoverage,
        ))?;
        let chosen: Vec<Manifest> = proposed
            .iter()
            .filter(|m| a.selected.contains(&m.id))
            .cloned()
            .collect();
        let cov = selection_metrics(&chosen, &graph.restrict(&a.selected).protection_arcs);
        let record = PhaseRecord {
            objective: a.objective,
            selected: a.selected.iter().copied().collect(),
            cost: cov.estimated_cost,
            iterations: a.iterations,
            explicit_instructions: cov.explicit_instr_sum as f64,
            explicit_blocks: cov.explicit_block_sum as f64,
            implicit_instructions: cov.implicit_instr as f64,
            implicit_blocks: cov.implicit_block as f64,
        };
        let mut reqs = record.requirements();
        reqs.extend(config.requirements.iter().copied());
        let b = select_manifests(request(a.cycles.clone(), reqs, Objective::MinimizeCost))?;
        (b, Some(record))
    } else {
        let s = select_manifests(request(
            initial.clone(),
            config.requirements.clone(),
            Objective::MinimizeCost,
        ))?;
        (s, None)
    };

    let iterations = selection.iterations + phase_a.as_ref().map_or(0, |a| a.iterations);
    let mut result = assemble(program, proposed, graph, &selection.selected)?;
    result.iterations_used = iterations;
    result.objective_value = selection.objective;
    result.initial_cycles = initial;
    result.cycles = selection.cycles.clone();
    result.phase_a = phase_a;
    result.solved = Some((selection.model, selection.solution));
    Ok(result)
}

/// Presence of the nodes a manifest depends on, under a selection.
pub(crate) fn presence_satisfied(
    m: &Manifest,
    selected: &BTreeSet<ManifestId>,
    mobilized: &BTreeSet<FunctionId>,
    program: &ProgramModel,
) -> bool {
    m.constraints.iter().all(|c| match c {
        Constraint::Present {
            required,
            min_count,
            ..
        } => {
            let present = required
                .iter()
                .filter(|r| match r {
                    NodeRef::Manifest(id) => selected.contains(id),
                    NodeRef::Function(f) => {
                        program.function(*f).is_some() && !mobilized.contains(f)
                    }
                    NodeRef::Instruction(_) => true,
                })
                .count();
            present >= *min_count as usize
        }
        _ => true,
    })
}

pub(crate) fn mobilized_by(
    manifests: &[Manifest],
    selected: &BTreeSet<ManifestId>,
) -> BTreeSet<FunctionId> {
    manifests
        .iter()
        .filter(|m| selected.contains(&m.id))
        .filter_map(|m| m.mobilizes)
        .collect()
}

/// Apply, order and finalize a conflict-free selection.
pub(crate) fn assemble(
    program: &ProgramModel,
    proposed: Vec<Manifest>,
    graph: DefenseGraph,
    selected: &BTreeSet<ManifestId>,
) -> Result<CompositionResult> {
    let mobilized = mobilized_by(&proposed, selected);
    let mut chosen: Vec<Manifest> = proposed
        .iter()
        .filter(|m| selected.contains(&m.id))
        .cloned()
        .collect();
    chosen.sort_by_key(|m| (m.kind.pass(), m.id));
    for m in &chosen {
        if !presence_satisfied(m, selected, &mobilized, program) {
            return Err(Error::InconsistentInput(format!(
                "selection leaves presence of {} unmet",
                m.id
            )));
        }
    }
    let mut protected = program.clone();
    for m in &chosen {
        protected = apply(m, &protected)?;
    }
    chosen.sort_by_key(|m| m.id);
    let sub = graph.restrict(selected);
    let order = finalization_order(&sub)?;
    let (finalized, patch) = finalize_and_verify(&protected, &chosen, &order)?;
    let metrics = selection_metrics(&chosen, &sub.protection_arcs);
    Ok(CompositionResult {
        proposed,
        selected: chosen,
        protected_program: finalized,
        finalization_order: order,
        metrics,
        iterations_used: 0,
        objective_value: 0.0,
        initial_cycles: Vec::new(),
        cycles: Vec::new(),
        patch,
        phase_a: None,
        graph,
        solved: None,
    })
}

/// Manifests in the order their placeholders must be patched: everything a
/// manifest reads is finalized before it. Ties go to the smallest id.
pub fn finalization_order(graph: &DefenseGraph) -> Result<Vec<ManifestId>> {
    let deps = graph.manifest_dependencies();
    let mut waiting: BTreeMap<ManifestId, usize> =
        deps.iter().map(|(m, d)| (*m, d.len())).collect();
    let mut dependents: BTreeMap<ManifestId, Vec<ManifestId>> = BTreeMap::new();
    for (m, ds) in &deps {
        for d in ds {
            dependents.entry(*d).or_default().push(*m);
        }
    }
    let mut ready: BTreeSet<ManifestId> = waiting
        .iter()
        .filter(|(_, n)| **n == 0)
        .map(|(m, _)| *m)
        .collect();
    let mut order = Vec::with_capacity(deps.len());
    while let Some(m) = ready.pop_first() {
        order.push(m);
        for d in dependents.get(&m).into_iter().flatten() {
            let n = waiting.get_mut(d).expect("known manifest");
            *n -= 1;
            if *n == 0 {
                ready.insert(*d);
            }
        }
    }
    if order.len() < deps.len() {
        let done: BTreeSet<ManifestId> = order.iter().copied().collect();
        return Err(Error::CycleRemains(
            deps.keys().filter(|m| !done.contains(m)).copied().collect(),
        ));
    }
    Ok(order)
}

/// 64-bit FNV-1a over the concatenation of `parts`.
pub fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in *p {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Current bytes of every instruction, with an optional tampered one.
struct Image {
    bytes: HashMap<InstrId, u64>,
}

impl Image {
    fn new(program: &ProgramModel, tampered: Option<InstrId>) -> Self {
        let bytes = program
            .all_instructions()
            .map(|(_, r)| {
                let i = r.instruction();
                let value = match r {
                    InstrRef::Guard(g) => g.value,
                    InstrRef::Program(_) => 0,
                };
                let nonce: u64 = if Some(i.id) == tampered { 0x5eed } else { 0 };
                let d = fnv1a(&[
                    &i.id.0.to_le_bytes(),
                    i.opcode.as_bytes(),
                    &i.size_bytes.to_le_bytes(),
                    &value.to_le_bytes(),
                    &nonce.to_le_bytes(),
                ]);
                (i.id, d)
            })
            .collect();
        Image { bytes }
    }

    fn hash(&self, region: &[InstrId]) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for id in region {
            let d = self.bytes.get(id).copied().unwrap_or(0);
            for b in d.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// Instructions whose bytes a checker folds into its hash, in fold order.
pub fn checked_region(
    m: &Manifest,
    manifests: &[Manifest],
    program: &ProgramModel,
) -> Vec<InstrId> {
    let by_id: BTreeMap<ManifestId, &Manifest> = manifests.iter().map(|m| (m.id, m)).collect();
    match m.kind {
        ManifestKind::SC => {
            let Some(f) = m.protected_function().and_then(|f| program.function(f)) else {
                return Vec::new();
            };
            f.code_blocks()
                .flat_map(|b| {
                    b.instructions
                        .iter()
                        .map(|i| i.id)
                        .chain(b.guards.iter().map(|g| g.instruction.id))
                })
                .collect()
        }
        ManifestKind::OH_VERIFY | ManifestKind::SROH_VERIFY => {
            let mut hashes = m.checked_manifests();
            hashes.sort();
            hashes
                .into_iter()
                .filter_map(|h| by_id.get(&h))
                .flat_map(|h| h.protected_instruction_ids.iter().copied())
                .collect()
        }
        ManifestKind::CSIV_VERIFY => {
            let mut regs = m.checked_manifests();
            regs.sort();
            let mut region: Vec<InstrId> = regs
                .into_iter()
                .filter_map(|r| by_id.get(&r))
                .flat_map(|r| r.guard_ids())
                .collect();
            region.extend(m.protected_instruction_ids.iter().copied());
            region
        }
        _ => Vec::new(),
    }
}

fn slot<'p>(program: &'p ProgramModel, m: &Manifest) -> Option<&'p Guard> {
    let ph = m.placeholder()?.instruction.id;
    program
        .block(m.placement_block)?
        .guards
        .iter()
        .find(|g| g.instruction.id == ph)
}

/// Patch every checker's placeholder in `order`, then recompute every check.
pub fn finalize_and_verify(
    protected: &ProgramModel,
    manifests: &[Manifest],
    order: &[ManifestId],
) -> Result<(ProgramModel, PatchState)> {
    let by_id: BTreeMap<ManifestId, &Manifest> = manifests.iter().map(|m| (m.id, m)).collect();
    let mut program = protected.clone();
    let mut state = PatchState::default();
    for id in order {
        let m = by_id.get(id).ok_or_else(|| {
            Error::FinalizationInconsistent(format!("{id} is not an applied manifest"))
        })?;
        if !m.kind.is_checker() {
            continue;
        }
        if state.slots.contains_key(id) {
            return Err(Error::FinalizationInconsistent(format!(
                "slot of {id} written twice"
            )));
        }
        let g = slot(&program, m).ok_or_else(|| {
            Error::FinalizationInconsistent(format!("placeholder of {id} missing"))
        })?;
        if !g.placeholder
            || g.instruction.opcode != m.placeholder().expect("has slot").instruction.opcode
        {
            return Err(Error::FinalizationInconsistent(format!(
                "placeholder of {id} was rewritten"
            )));
        }
        let ph = g.instruction.id;
        let value = Image::new(&program, None).hash(&checked_region(m, manifests, &program));
        let block = program.block_mut(m.placement_block).expect("slot found");
        block
            .guards
            .iter_mut()
            .find(|g| g.instruction.id == ph)
            .expect("slot found")
            .value = value;
        state.slots.insert(*id, value);
        state.finalized.push(*id);
    }
    for m in manifests.iter().filter(|m| m.kind.is_checker()) {
        if !state.slots.contains_key(&m.id) {
            return Err(Error::FinalizationInconsistent(format!(
                "{} never finalized",
                m.id
            )));
        }
    }
    if let Some(alarm) = triggered(&program, manifests, None).into_iter().next() {
        return Err(Error::FalseAlarm(alarm));
    }
    Ok((program, state))
}

/// Checkers whose recomputed hash disagrees with their patched slot.
pub fn triggered(
    program: &ProgramModel,
    manifests: &[Manifest],
    tampered: Option<InstrId>,
) -> BTreeSet<ManifestId> {
    let image = Image::new(program, tampered);
    manifests
        .iter()
        .filter(|m| m.kind.is_checker())
        .filter(|m| {
            let expected = slot(program, m).map(|g| g.value);
            expected != Some(image.hash(&checked_region(m, manifests, program)))
        })
        .map(|m| m.id)
        .collect()
}

/// Checkers that fire when `instruction` is modified in the finalized program.
pub fn tamper_check(
    result: &CompositionResult,
    instruction: InstrId,
) -> Result<BTreeSet<ManifestId>> {
    tamper_program(&result.protected_program, &result.selected, instruction)
}

pub fn tamper_program(
    program: &ProgramModel,
    manifests: &[Manifest],
    instruction: InstrId,
) -> Result<BTreeSet<ManifestId>> {
    if program.find_instruction(instruction).is_none() {
        return Err(Error::UnknownInstruction(instruction));
    }
    Ok(triggered(program, manifests, Some(instruction)))
}

/// Clear every placeholder and run finalization again from scratch.
pub fn refinalize(file: &ProtectedFile) -> Result<(ProgramModel, PatchState)> {
    let mut program = file.program();
    for f in &mut program.functions {
        for b in &mut f.blocks {
            for g in b.guards.iter_mut().filter(|g| g.placeholder) {
                g.value = 0;
            }
        }
    }
    finalize_and_verify(&program, &file.manifests, &file.finalization_order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::mileage;

    #[test]
    fn mileage_two_phase_keeps_sc() {
        let r = compose(&mileage(), &CompositionConfig::default()).unwrap();
        let kinds: Vec<ManifestKind> = r.selected.iter().map(|m| m.kind).collect();
        assert!(kinds.contains(&ManifestKind::SC));
        assert!(!kinds.contains(&ManifestKind::OH_VERIFY));
        assert_eq!(r.initial_cycles.len(), 1);
        assert!(r.patch.slots.len() >= 2);
    }

    #[test]
    fn empty_program_composes_to_nothing() {
        let p = ProgramModel::empty("e");
        let r = compose(&p, &CompositionConfig::default()).unwrap();
        assert!(r.selected.is_empty());
        assert_eq!(r.protected_program, p);
    }

    #[test]
    fn config_defaults_and_unknown_pass() {
        let c = CompositionConfig::from_json("{}").unwrap();
        assert_eq!(c.max_iterations, 50);
        assert!(matches!(
            CompositionConfig::from_json(r#"{"passes":["SC","XX"]}"#),
            Err(Error::UnknownKind(_))
        ));
        assert!(matches!(
            CompositionConfig::from_json(r#"{"max_iterations":0}"#),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn fnv_is_order_sensitive() {
        assert_ne!(fnv1a(&[b"ab"]), fnv1a(&[b"ba"]));
        assert_eq!(fnv1a(&[b""]), 0xcbf2_9ce4_8422_2325);
    }
}
