use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use minilp::{ComparisonOp, OptimizationDirection, Problem, Solution as LpSolution, Variable};
use serde::{Deserialize, Serialize};

use super::model::{IlpModel, Sense};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    /// Variable name to value. Empty when no feasible point was found.
    pub assignment: BTreeMap<String, u8>,
    pub objective: f64,
    pub status: Status,
    pub nodes_explored: u64,
    /// Values in model variable order; `None` when no feasible point was found.
    #[serde(skip)]
    pub values: Option<Vec<bool>>,
}

impl Solution {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }
}

const INT_TOL: f64 = 1e-6;
const BOUND_TOL: f64 = 1e-7;

/// Root LP relaxation; `None` if infeasible.
fn relax_root(model: &IlpModel, cost: &[f64]) -> Option<(Vec<Variable>, LpSolution)> {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = cost.iter().map(|c| lp.add_var(*c, (0.0, 1.0))).collect();
    for c in &model.constraints {
        if c.terms.is_empty() {
            if c.lo > BOUND_TOL || c.hi < -BOUND_TOL {
                return None;
            }
            continue;
        }
        let expr: Vec<_> = c.terms.iter().map(|(v, k)| (vars[*v], *k)).collect();
        if c.lo.is_finite() && c.hi.is_finite() && c.lo == c.hi {
            lp.add_constraint(expr.as_slice(), ComparisonOp::Eq, c.lo);
            continue;
        }
        if c.lo.is_finite() {
            lp.add_constraint(expr.as_slice(), ComparisonOp::Ge, c.lo);
        }
        if c.hi.is_finite() {
            lp.add_constraint(expr.as_slice(), ComparisonOp::Le, c.hi);
        }
    }
    let sol = lp.solve().ok()?;
    Some((vars, sol))
}

/// Depth-first branch and bound over the binary variables, bounding with the
/// LP relaxation. Branches on the lowest-index fractional variable, 0 first;
/// an incumbent is only replaced by a strictly better point, so results are
/// deterministic. Children re-solve from the parent's basis.
pub fn solve(model: &IlpModel, time_limit: Duration) -> Solution {
    let start = Instant::now();
    let n = model.vars.len();
    let mut cost = vec![0.0; n];
    for (v, c) in &model.objective {
        cost[*v] += c;
    }
    let sign = if model.sense == Sense::Maximize {
        -1.0
    } else {
        1.0
    };
    for c in &mut cost {
        *c *= sign;
    }

    let mut best: Option<(f64, Vec<bool>)> = None;
    let mut nodes = 0u64;
    let mut timed_out = false;
    let mut stack: Vec<(LpSolution, Vec<Option<bool>>)> = Vec::new();
    let mut lp_vars = Vec::new();
    if n == 0 {
        nodes = 1;
        if model.feasible(&[]) {
            best = Some((0.0, Vec::new()));
        }
    } else if start.elapsed() > time_limit {
        timed_out = true;
    } else {
        nodes = 1;
        if let Some((vars, root)) = relax_root(model, &cost) {
            lp_vars = vars;
            stack.push((root, vec![None; n]));
        }
    }

    // a node on the stack is already solved and counted
    while let Some((lp, fixed)) = stack.pop() {
        if start.elapsed() > time_limit {
            timed_out = true;
            break;
        }
        let bound = lp.objective();
        if let Some((inc, _)) = &best {
            if bound >= inc - BOUND_TOL {
                continue;
            }
        }
        let x: Vec<f64> = lp_vars.iter().map(|v| lp[*v]).collect();
        let mut branch =
            (0..n).find(|&k| fixed[k].is_none() && (x[k] - x[k].round()).abs() > INT_TOL);
        if branch.is_none() {
            let point: Vec<bool> = x.iter().map(|v| *v > 0.5).collect();
            if model.feasible(&point) {
                let obj: f64 = point
                    .iter()
                    .zip(&cost)
                    .filter(|(b, _)| **b)
                    .map(|(_, c)| c)
                    .sum();
                if best.as_ref().is_none_or(|(inc, _)| obj < inc - BOUND_TOL) {
                    best = Some((obj, point));
                }
                continue;
            }
            // numerically integral but rounding broke a row: keep branching
            branch = (0..n).find(|&k| fixed[k].is_none());
        }
        let Some(k) = branch else { continue };
        let mut children = Vec::with_capacity(2);
        for value in [true, false] {
            nodes += 1;
            let mut f = fixed.clone();
            f[k] = Some(value);
            if let Ok(child) = lp
                .clone()
                .fix_var(lp_vars[k], if value { 1.0 } else { 0.0 })
            {
                children.push((child, f));
            }
        }
        // pushed 1 then 0 so the 0-branch is explored first
        stack.extend(children);
    }

    let status = match (&best, timed_out) {
        (_, true) => Status::TimedOut,
        (Some(_), false) => Status::Optimal,
        (None, false) => Status::Infeasible,
    };
    match best {
        Some((_, values)) => Solution {
            assignment: model
                .vars
                .iter()
                .zip(&values)
                .map(|(v, b)| (v.name(), u8::from(*b)))
                .collect(),
            objective: model.objective_value(&values),
            status,
            nodes_explored: nodes,
            values: Some(values),
        },
        None => Solution {
            assignment: BTreeMap::new(),
            objective: 0.0,
            status,
            nodes_explored: nodes,
            values: None,
        },
    }
}
