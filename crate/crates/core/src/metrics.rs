//! Coverage and overhead metrics, and the heuristic baseline used for comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::composer::{
    assemble, compose, mobilized_by, presence_satisfied, CompositionConfig, CompositionResult,
};
use crate::error::{Error, Result};
use crate::graph::{build_graph, find_cycles, DefenseGraph};
use crate::ilp::{Metric, Requirement};
use crate::passes::{propose_all, Manifest, ManifestId, ManifestKind};
use crate::program::{generate_program, InstrId, ProgramModel};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub explicit_instr_sum: usize,
    pub explicit_instr_union: usize,
    pub explicit_block_sum: usize,
    pub explicit_block_union: usize,
    pub implicit_instr: usize,
    pub implicit_block: usize,
    pub estimated_cost: f64,
    /// Number of protecting manifests -> number of instructions with that many.
    pub connectivity_histogram: BTreeMap<usize, usize>,
    pub manifest_count: usize,
}

impl MetricsReport {
    /// Coverage floors reproducing this report's sums.
    pub fn coverage_requirements(&self) -> Vec<Requirement> {
        vec![
            Requirement::at_least(Metric::ExplicitInstructions, self.explicit_instr_sum as f64),
            Requirement::at_least(Metric::ExplicitBlocks, self.explicit_block_sum as f64),
            Requirement::at_least(Metric::ImplicitInstructions, self.implicit_instr as f64),
            Requirement::at_least(Metric::ImplicitBlocks, self.implicit_block as f64),
        ]
    }
}

/// Metrics of `selected`, given the protection arcs among them.
pub fn selection_metrics(
    selected: &[Manifest],
    protection_arcs: &BTreeSet<(ManifestId, ManifestId)>,
) -> MetricsReport {
    let ids: BTreeSet<ManifestId> = selected.iter().map(|m| m.id).collect();
    let protected: BTreeSet<ManifestId> = protection_arcs
        .iter()
        .filter(|(j, i)| ids.contains(j) && ids.contains(i))
        .map(|(_, i)| *i)
        .collect();
    let mut r = MetricsReport {
        manifest_count: selected.len(),
        ..MetricsReport::default()
    };
    let mut per_instr: BTreeMap<InstrId, usize> = BTreeMap::new();
    let mut blocks = BTreeSet::new();
    for m in selected {
        r.explicit_instr_sum += m.protected_instruction_ids.len();
        r.explicit_block_sum += m.protected_block_ids.len();
        r.estimated_cost += m.cost;
        for i in &m.protected_instruction_ids {
            *per_instr.entry(*i).or_default() += 1;
        }
        blocks.extend(m.protected_block_ids.iter().copied());
        if protected.contains(&m.id) {
            r.implicit_instr += m.protected_instruction_ids.len();
            r.implicit_block += m.protected_block_ids.len();
        }
    }
    r.explicit_instr_union = per_instr.len();
    r.explicit_block_union = blocks.len();
    for k in per_instr.values() {
        *r.connectivity_histogram.entry(*k).or_default() += 1;
    }
    r
}

pub fn compute_metrics(result: &CompositionResult) -> MetricsReport {
    let sub = result.graph.restrict(&result.selected_ids());
    selection_metrics(&result.selected, &sub.protection_arcs)
}

/// Heuristic selection: start from every proposal, drop manifests whose
/// presence requirements fail (code mobility yields to self-checksumming),
/// and break each remaining cycle by dropping its manifest with the smallest
/// explicit coverage, later id first on ties.
pub fn baseline_selection(
    graph: &DefenseGraph,
    manifests: &[Manifest],
    program: &ProgramModel,
) -> BTreeSet<ManifestId> {
    let by_id: BTreeMap<ManifestId, &Manifest> = manifests.iter().map(|m| (m.id, m)).collect();
    let mut selected: BTreeSet<ManifestId> = by_id.keys().copied().collect();
    loop {
        loop {
            let mut changed = false;
            let cms: Vec<&Manifest> = manifests
                .iter()
                .filter(|m| m.kind == ManifestKind::CM && selected.contains(&m.id))
                .collect();
            for cm in cms {
                let f = cm.mobilizes;
                let needed = manifests.iter().any(|o| {
                    o.id != cm.id
                        && selected.contains(&o.id)
                        && f.is_some_and(|f| o.required_functions().contains(&f))
                });
                if needed {
                    selected.remove(&cm.id);
                    changed = true;
                }
            }
            let mobilized = mobilized_by(manifests, &selected);
            let failing: Vec<ManifestId> = selected
                .iter()
                .filter(|id| !presence_satisfied(by_id[*id], &selected, &mobilized, program))
                .copied()
                .collect();
            if !failing.is_empty() {
                changed = true;
                for id in failing {
                    selected.remove(&id);
                }
            }
            if !changed {
                break;
            }
        }
        let cycles = find_cycles(&graph.restrict(&selected));
        if cycles.is_empty() {
            return selected;
        }
        for c in cycles {
            let victim = c
                .manifest_ids
                .iter()
                .copied()
                .min_by_key(|id| {
                    (
                        by_id[id].protected_instruction_ids.len(),
                        std::cmp::Reverse(*id),
                    )
                })
                .expect("cycles name at least one manifest");
            selected.remove(&victim);
        }
    }
}

pub fn run_baseline(
    program: &ProgramModel,
    config: &CompositionConfig,
) -> Result<CompositionResult> {
    config.validate()?;
    program.validate()?;
    let proposed = propose_all(program, &config.pass_config()?)?;
    let graph = build_graph(&proposed, program)?;
    let initial = find_cycles(&graph);
    let selected = baseline_selection(&graph, &proposed, program);
    let mut result = assemble(program, proposed, graph, &selected)?;
    result.initial_cycles = initial;
    result.objective_value = result.metrics.estimated_cost;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub program: String,
    pub manifests_base: usize,
    pub manifests_opt: usize,
    pub cost_base: f64,
    pub cost_opt: f64,
    pub decrease_pct: f64,
    pub explicit: usize,
    pub implicit: usize,
}

/// Baseline versus cost-minimal selection with at least the baseline's coverage.
pub fn compare(program: &ProgramModel, config: &CompositionConfig) -> Result<ComparisonRecord> {
    let base = run_baseline(program, config)?;
    let opt_config = CompositionConfig {
        two_phase: false,
        requirements: base.metrics.coverage_requirements(),
        ..config.clone()
    };
    let opt = compose(program, &opt_config)?;
    let cost_base = base.metrics.estimated_cost;
    let cost_opt = opt.metrics.estimated_cost;
    let decrease_pct = if cost_base > 0.0 {
        (cost_base - cost_opt) / cost_base * 100.0
    } else {
        0.0
    };
    Ok(ComparisonRecord {
        program: program.name.clone(),
        manifests_base: base.selected.len(),
        manifests_opt: opt.selected.len(),
        cost_base,
        cost_opt,
        decrease_pct,
        explicit: opt.metrics.explicit_instr_sum,
        implicit: opt.metrics.implicit_instr,
    })
}

/// Seeded synthetic corpus of small programs.
pub fn corpus(seed: u64, count: usize) -> Vec<ProgramModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let n = rng.gen_range(3..=6);
            let blocks = rng.gen_range(1..=3);
            let det = rng.gen_range(0.3..0.8);
            let mut p = generate_program(rng.gen(), n, blocks, det);
            p.name = format!("corpus-{seed}-{k}");
            p
        })
        .collect()
}

pub fn write_comparison_csv(records: &[ComparisonRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::Io {
        path: path.display().to_string(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in records {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
