use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Cycle, DefenseGraph};
use crate::passes::{Constraint, Manifest, ManifestId, ManifestKind, NodeRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VarRole {
    /// Manifest selected.
    Manifest(ManifestId),
    /// Protection arc active: both `protector` and `protectee` selected.
    Arc {
        protector: ManifestId,
        protectee: ManifestId,
    },
    /// Some selected manifest protects this manifest's guard.
    Flag(ManifestId),
}

impl VarRole {
    pub fn name(&self) -> String {
        match self {
            VarRole::Manifest(m) => format!("m{}", m.0),
            VarRole::Arc {
                protector,
                protectee,
            } => format!("e_{}_{}", protector.0, protectee.0),
            VarRole::Flag(m) => format!("f{}", m.0),
        }
    }

    pub fn parse(name: &str) -> Option<VarRole> {
        if let Some(rest) = name.strip_prefix("e_") {
            let (a, b) = rest.split_once('_')?;
            return Some(VarRole::Arc {
                protector: ManifestId(a.parse().ok()?),
                protectee: ManifestId(b.parse().ok()?),
            });
        }
        if let Some(rest) = name.strip_prefix('m') {
            return Some(VarRole::Manifest(ManifestId(rest.parse().ok()?)));
        }
        if let Some(rest) = name.strip_prefix('f') {
            return Some(VarRole::Flag(ManifestId(rest.parse().ok()?)));
        }
        None
    }
}

/// `lo <= Σ coef·x <= hi`; either bound may be infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub lo: f64,
    pub hi: f64,
}

impl LinearConstraint {
    pub fn activity(&self, x: &[bool]) -> f64 {
        self.terms
            .iter()
            .filter(|(v, _)| x[*v])
            .map(|(_, c)| c)
            .sum()
    }

    pub fn satisfied(&self, x: &[bool]) -> bool {
        const EPS: f64 = 1e-9;
        let a = self.activity(x);
        a >= self.lo - EPS && a <= self.hi + EPS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlpModel {
    pub vars: Vec<VarRole>,
    pub constraints: Vec<LinearConstraint>,
    pub objective: Vec<(usize, f64)>,
    pub sense: Sense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ExplicitInstructions,
    ExplicitBlocks,
    ImplicitInstructions,
    ImplicitBlocks,
    ManifestCount,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("metric serializes");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bound {
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "<=")]
    AtMost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Requirement {
    pub metric: Metric,
    pub sense: Bound,
    pub value: f64,
}

impl Requirement {
    pub fn at_least(metric: Metric, value: f64) -> Self {
        Requirement {
            metric,
            sense: Bound::AtLeast,
            value,
        }
    }

    pub fn at_most(metric: Metric, value: f64) -> Self {
        Requirement {
            metric,
            sense: Bound::AtMost,
            value,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ModelOptions {
    /// Encode flags as `0 <= |E|·f - Σe <= 1` instead of the disjunction
    /// linearization. Infeasible whenever between one and |E|-2 arcs are active.
    pub aggregate_flag_row: bool,
}

impl IlpModel {
    pub fn empty(sense: Sense) -> Self {
        IlpModel {
            vars: Vec::new(),
            constraints: Vec::new(),
            objective: Vec::new(),
            sense,
        }
    }

    pub fn var_names(&self) -> Vec<String> {
        self.vars.iter().map(|v| v.name()).collect()
    }

    pub fn index_of(&self, role: VarRole) -> Option<usize> {
        self.vars.iter().position(|v| *v == role)
    }

    pub fn manifest_vars(&self) -> BTreeMap<ManifestId, usize> {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(k, v)| match v {
                VarRole::Manifest(m) => Some((*m, k)),
                _ => None,
            })
            .collect()
    }

    pub fn objective_value(&self, x: &[bool]) -> f64 {
        self.objective
            .iter()
            .filter(|(v, _)| x[*v])
            .map(|(_, c)| c)
            .sum()
    }

    pub fn feasible(&self, x: &[bool]) -> bool {
        self.constraints.iter().all(|c| c.satisfied(x))
    }

    pub fn add(&mut self, name: impl Into<String>, terms: Vec<(usize, f64)>, lo: f64, hi: f64) {
        self.constraints.push(LinearConstraint {
            name: name.into(),
            terms,
            lo,
            hi,
        });
    }

    pub fn set_objective(&mut self, terms: Vec<(usize, f64)>, sense: Sense) {
        self.objective = terms;
        self.sense = sense;
    }

    /// Sparse terms of a coverage metric.
    pub fn metric_terms(&self, metric: Metric, manifests: &[Manifest]) -> Vec<(usize, f64)> {
        let by_id: BTreeMap<ManifestId, &Manifest> = manifests.iter().map(|m| (m.id, m)).collect();
        let score = |m: ManifestId, blocks: bool| {
            by_id.get(&m).map_or(0.0, |m| {
                if blocks {
                    m.protected_block_ids.len() as f64
                } else {
                    m.protected_instruction_ids.len() as f64
                }
            })
        };
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(k, v)| {
                let c = match (metric, v) {
                    (Metric::ExplicitInstructions, VarRole::Manifest(m)) => score(*m, false),
                    (Metric::ExplicitBlocks, VarRole::Manifest(m)) => score(*m, true),
                    (Metric::ImplicitInstructions, VarRole::Flag(m)) => score(*m, false),
                    (Metric::ImplicitBlocks, VarRole::Flag(m)) => score(*m, true),
                    (Metric::ManifestCount, VarRole::Manifest(_)) => 1.0,
                    _ => 0.0,
                };
                (c != 0.0).then_some((k, c))
            })
            .collect()
    }

    /// Add `Σ m ≤ |cycle| - 1` for a newly found cycle.
    pub fn add_cycle(&mut self, cycle: &Cycle) -> Result<()> {
        let mvars = self.manifest_vars();
        let mut terms = Vec::with_capacity(cycle.manifest_ids.len());
        for m in &cycle.manifest_ids {
            let v = mvars.get(m).ok_or_else(|| {
                Error::InconsistentInput(format!("cycle references unknown manifest {m}"))
            })?;
            terms.push((*v, 1.0));
        }
        let name = format!(
            "cyc_{}",
            cycle
                .manifest_ids
                .iter()
                .map(|m| m.0.to_string())
                .collect::<Vec<_>>()
                .join("_")
        );
        let hi = terms.len() as f64 - 1.0;
        self.add(name, terms, f64::NEG_INFINITY, hi);
        Ok(())
    }
}

/// Build the selection model: cycle, presence, protection-arc and requirement
/// constraints with a minimize-cost objective.
pub fn build_model(
    graph: &DefenseGraph,
    manifests: &[Manifest],
    cycles: &[Cycle],
    requirements: &[Requirement],
    costs: &BTreeMap<ManifestId, f64>,
    options: ModelOptions,
) -> Result<IlpModel> {
    let mut model = IlpModel::empty(Sense::Minimize);
    let mut sorted: Vec<&Manifest> = manifests.iter().collect();
    sorted.sort_by_key(|m| m.id);
    let mut mvar: BTreeMap<ManifestId, usize> = BTreeMap::new();
    for m in &sorted {
        if mvar.insert(m.id, model.vars.len()).is_some() {
            return Err(Error::InconsistentInput(format!(
                "duplicate manifest {}",
                m.id
            )));
        }
        model.vars.push(VarRole::Manifest(m.id));
    }

    let mut incoming: BTreeMap<ManifestId, Vec<usize>> = BTreeMap::new();
    for (j, i) in &graph.protection_arcs {
        let (Some(&vj), Some(&vi)) = (mvar.get(j), mvar.get(i)) else {
            continue;
        };
        let e = model.vars.len();
        model.vars.push(VarRole::Arc {
            protector: *j,
            protectee: *i,
        });
        model.add(
            format!("arc_{}_{}", j.0, i.0),
            vec![(vi, 1.0), (vj, 1.0), (e, -2.0)],
            0.0,
            1.0,
        );
        model.add(
            format!("arc_{}_{}_i", j.0, i.0),
            vec![(vi, 1.0), (e, -1.0)],
            0.0,
            f64::INFINITY,
        );
        model.add(
            format!("arc_{}_{}_j", j.0, i.0),
            vec![(vj, 1.0), (e, -1.0)],
            0.0,
            f64::INFINITY,
        );
        incoming.entry(*i).or_default().push(e);
    }
    for (i, es) in &incoming {
        let f = model.vars.len();
        model.vars.push(VarRole::Flag(*i));
        if options.aggregate_flag_row {
            let mut terms = vec![(f, es.len() as f64)];
            terms.extend(es.iter().map(|e| (*e, -1.0)));
            model.add(format!("flag_{}", i.0), terms, 0.0, 1.0);
        } else {
            let mut terms = vec![(f, -1.0)];
            terms.extend(es.iter().map(|e| (*e, 1.0)));
            model.add(format!("flag_{}_any", i.0), terms, 0.0, f64::INFINITY);
            for e in es {
                let role = model.vars[*e];
                let VarRole::Arc { protector, .. } = role else {
                    unreachable!()
                };
                model.add(
                    format!("flag_{}_{}", i.0, protector.0),
                    vec![(f, 1.0), (*e, -1.0)],
                    0.0,
                    f64::INFINITY,
                );
            }
        }
    }

    for c in cycles {
        model.add_cycle(c)?;
    }

    for m in &sorted {
        let vi = mvar[&m.id];
        for (k, c) in m.constraints.iter().enumerate() {
            let Constraint::Present {
                required,
                min_count,
                ..
            } = c
            else {
                continue;
            };
            let mut constant = 0u32;
            let mut others = Vec::new();
            for r in required {
                match r {
                    NodeRef::Manifest(id) => {
                        if let Some(v) = mvar.get(id) {
                            others.push(*v);
                        }
                    }
                    _ => constant += 1,
                }
            }
            if *min_count <= constant {
                continue;
            }
            let need = f64::from(*min_count - constant);
            let all_needed = constant == 0 && *min_count as usize == required.len();
            if all_needed {
                if others.len() < required.len() {
                    // a required manifest was never proposed
                    model.add(format!("absent_{}_{k}", m.id.0), vec![(vi, 1.0)], 0.0, 0.0);
                }
                for (n, o) in others.iter().enumerate() {
                    model.add(
                        format!("present_{}_{k}_{n}", m.id.0),
                        vec![(vi, 1.0), (*o, -1.0)],
                        f64::NEG_INFINITY,
                        0.0,
                    );
                }
            } else {
                let mut terms = vec![(vi, -need)];
                terms.extend(others.iter().map(|o| (*o, 1.0)));
                model.add(format!("present_{}_{k}", m.id.0), terms, 0.0, f64::INFINITY);
            }
        }
    }

    // a function cannot be both mobilized and required in the static image
    for cm in sorted.iter().filter(|m| m.kind == ManifestKind::CM) {
        let Some(f) = cm.mobilizes else { continue };
        for other in &sorted {
            if other.id != cm.id && other.required_functions().contains(&f) {
                model.add(
                    format!("excl_{}_{}", other.id.0, cm.id.0),
                    vec![(mvar[&other.id], 1.0), (mvar[&cm.id], 1.0)],
                    f64::NEG_INFINITY,
                    1.0,
                );
            }
        }
    }

    for (k, r) in requirements.iter().enumerate() {
        if !(r.value.is_finite() && r.value >= 0.0) {
            return Err(Error::Validation(format!(
                "requirement value {} must be >= 0",
                r.value
            )));
        }
        let terms = model.metric_terms(r.metric, manifests);
        let (lo, hi) = match r.sense {
            Bound::AtLeast => (r.value, f64::INFINITY),
            Bound::AtMost => (f64::NEG_INFINITY, r.value),
        };
        model.add(format!("req{k}_{}", r.metric), terms, lo, hi);
    }

    let objective = sorted
        .iter()
        .filter_map(|m| {
            let c = costs.get(&m.id).copied().unwrap_or(m.cost);
            (c != 0.0).then_some((mvar[&m.id], c))
        })
        .collect();
    model.set_objective(objective, Sense::Minimize);
    Ok(model)
}

/// Values of the auxiliary variables implied by a manifest selection.
pub fn complete_assignment(model: &IlpModel, selected: &BTreeSet<ManifestId>) -> Vec<bool> {
    let mut x: Vec<bool> = model
        .vars
        .iter()
        .map(|v| match v {
            VarRole::Manifest(m) => selected.contains(m),
            VarRole::Arc {
                protector,
                protectee,
            } => selected.contains(protector) && selected.contains(protectee),
            VarRole::Flag(_) => false,
        })
        .collect();
    for (k, v) in model.vars.iter().enumerate() {
        if let VarRole::Flag(i) = v {
            x[k] = model.vars.iter().enumerate().any(|(e, r)| {
                matches!(r, VarRole::Arc { protectee, .. } if protectee == i) && x[e]
            });
        }
    }
    x
}
