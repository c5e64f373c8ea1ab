mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use proptest::prelude::*;
use protcomp::graph::{build_graph, find_cycles, DefenseGraph};
use protcomp::ilp::{
    build_model, export_lp, parse_lp, solve, IlpModel, Metric, ModelOptions, Requirement, Sense,
    Status, VarRole,
};
use protcomp::passes::{propose_all, Manifest, ManifestId, ManifestKind, NodeRef, PassConfig};
use protcomp::program::ProgramModel;

use common::*;

const LIMIT: Duration = Duration::from_secs(30);

fn costs(ms: &[Manifest]) -> BTreeMap<ManifestId, f64> {
    ms.iter().map(|m| (m.id, m.cost)).collect()
}

fn two_cycle() -> (Vec<Manifest>, DefenseGraph) {
    let mut a = bare(1, ManifestKind::SC);
    let mut b = bare(2, ManifestKind::OH_VERIFY);
    b.cost = 2.0;
    reads(&mut a, 2);
    reads(&mut b, 1);
    let ms = vec![a, b];
    let g = build_graph(&ms, &ProgramModel::empty("pair")).unwrap();
    (ms, g)
}

/// m1 guarded by m2, m3 and m4.
fn three_protectors() -> (Vec<Manifest>, DefenseGraph) {
    let ms: Vec<Manifest> = (1..=4).map(|k| bare(k, ManifestKind::SC)).collect();
    let mut g = build_graph(&ms, &ProgramModel::empty("fan")).unwrap();
    for j in 2..=4 {
        g.protection_arcs.insert((ManifestId(j), ManifestId(1)));
    }
    (ms, g)
}

fn pin(model: &mut IlpModel, m: u32, value: bool) {
    let v = model.index_of(VarRole::Manifest(ManifestId(m))).unwrap();
    let b = if value { 1.0 } else { 0.0 };
    model.add(format!("pin_{m}"), vec![(v, 1.0)], b, b);
}

/// Arc and flag variables agree with the manifest variables.
fn linearization_exact(model: &IlpModel, x: &[bool]) -> bool {
    let m = |id: ManifestId| x[model.index_of(VarRole::Manifest(id)).unwrap()];
    model.vars.iter().enumerate().all(|(k, v)| match v {
        VarRole::Manifest(_) => true,
        VarRole::Arc {
            protector,
            protectee,
        } => x[k] == (m(*protector) && m(*protectee)),
        VarRole::Flag(i) => {
            let any = model.vars.iter().enumerate().any(|(e, r)| {
                matches!(r, VarRole::Arc { protectee, .. } if protectee == i) && x[e]
            });
            x[k] == any
        }
    })
}

#[test]
fn two_cycle_picks_the_cheaper_manifest() {
    let (ms, g) = two_cycle();
    let reqs = [Requirement::at_least(Metric::ManifestCount, 1.0)];
    let model = build_model(
        &g,
        &ms,
        &find_cycles(&g),
        &reqs,
        &costs(&ms),
        ModelOptions::default(),
    )
    .unwrap();
    let s = solve(&model, LIMIT);
    assert_eq!(s.status, Status::Optimal);
    assert_eq!(s.objective, 1.0);
    assert_eq!(s.assignment["m1"], 1);
    assert_eq!(s.assignment["m2"], 0);
}

#[test]
fn two_cycle_lp_line() {
    let (ms, g) = two_cycle();
    let model = build_model(
        &g,
        &ms,
        &find_cycles(&g),
        &[],
        &costs(&ms),
        ModelOptions::default(),
    )
    .unwrap();
    let lp = export_lp(&model);
    assert!(
        lp.lines().any(|l| l.trim().ends_with(": m1 + m2 <= 1")),
        "{lp}"
    );
    assert!(lp.starts_with("Minimize\n"));
    assert!(lp.ends_with("End\n"));
}

#[test]
fn unconstrained_minimum_is_empty() {
    let ms: Vec<Manifest> = (1..=5).map(|k| bare(k, ManifestKind::OBF)).collect();
    let g = build_graph(&ms, &ProgramModel::empty("free")).unwrap();
    let model = build_model(&g, &ms, &[], &[], &costs(&ms), ModelOptions::default()).unwrap();
    let s = solve(&model, LIMIT);
    assert_eq!(s.objective, 0.0);
    assert!(s.assignment.values().all(|v| *v == 0));
}

#[test]
fn flag_rows_for_three_protectors() {
    let (ms, g) = three_protectors();
    let model = build_model(&g, &ms, &[], &[], &costs(&ms), ModelOptions::default()).unwrap();
    let f = model.index_of(VarRole::Flag(ManifestId(1))).unwrap();
    let es: BTreeSet<usize> = (2..=4)
        .map(|j| {
            model
                .index_of(VarRole::Arc {
                    protector: ManifestId(j),
                    protectee: ManifestId(1),
                })
                .unwrap()
        })
        .collect();
    // f <= Σe
    assert!(model.constraints.iter().any(|c| {
        let terms: BTreeMap<usize, f64> = c.terms.iter().copied().collect();
        terms.len() == 4
            && terms.get(&f) == Some(&-1.0)
            && es.iter().all(|e| terms.get(e) == Some(&1.0))
            && c.lo == 0.0
            && c.hi.is_infinite()
    }));
    // f >= e, once per arc
    for e in &es {
        assert!(model.constraints.iter().any(|c| {
            let terms: BTreeMap<usize, f64> = c.terms.iter().copied().collect();
            terms.len() == 2
                && terms.get(&f) == Some(&1.0)
                && terms.get(e) == Some(&-1.0)
                && c.lo == 0.0
        }));
    }
}

#[test]
fn literal_flag_row_rejects_one_active_arc_of_three() {
    let (ms, g) = three_protectors();
    for literal in [false, true] {
        let opts = ModelOptions {
            aggregate_flag_row: literal,
        };
        let mut model = build_model(&g, &ms, &[], &[], &costs(&ms), opts).unwrap();
        pin(&mut model, 1, true);
        pin(&mut model, 2, true);
        pin(&mut model, 3, false);
        pin(&mut model, 4, false);
        let s = solve(&model, LIMIT);
        if literal {
            assert_eq!(s.status, Status::Infeasible);
            // neither flag value satisfies 0 <= 3f - 1 <= 1
            let f = model.index_of(VarRole::Flag(ManifestId(1))).unwrap();
            let mut x = protcomp::ilp::complete_assignment(&model, &id_set(&[1, 2]));
            for fv in [false, true] {
                x[f] = fv;
                assert!(!model.feasible(&x));
            }
        } else {
            assert_eq!(s.status, Status::Optimal);
            assert_eq!(s.assignment["f1"], 1);
        }
    }
}

#[test]
fn empty_model_exports_bare_sections() {
    let text = export_lp(&IlpModel::empty(Sense::Minimize));
    assert_eq!(text, "Minimize\n obj: 0\nSubject To\nBinary\nEnd\n");
    assert_eq!(parse_lp(&text).unwrap(), IlpModel::empty(Sense::Minimize));
}

#[test]
fn double_bounded_rows_are_split() {
    let (ms, g) = three_protectors();
    let model = build_model(&g, &ms, &[], &[], &costs(&ms), ModelOptions::default()).unwrap();
    let lp = export_lp(&model);
    assert!(lp.contains(" arc_2_1_lo: m1 + m2 - 2 e_2_1 >= 0\n"), "{lp}");
    assert!(lp.contains(" arc_2_1_hi: m1 + m2 - 2 e_2_1 <= 1\n"), "{lp}");
    assert_eq!(parse_lp(&lp).unwrap(), model);
}

/// Model over a small generated program with seeded requirements.
fn seeded_model(seed: u64, frac: f64, maximize: bool) -> Option<IlpModel> {
    let p = small_program(seed);
    let ms = propose_all(&p, &PassConfig::default()).unwrap();
    if ms.is_empty() || ms.len() > 14 {
        return None;
    }
    let g = build_graph(&ms, &p).unwrap();
    let total: usize = ms.iter().map(|m| m.protected_instruction_ids.len()).sum();
    let reqs = if maximize {
        vec![Requirement::at_most(
            Metric::ManifestCount,
            (ms.len() as f64 * frac).ceil(),
        )]
    } else {
        vec![
            Requirement::at_least(Metric::ExplicitInstructions, (total as f64 * frac).floor()),
            Requirement::at_least(
                Metric::ImplicitInstructions,
                (total as f64 * frac * 0.3).floor(),
            ),
        ]
    };
    let mut model = build_model(
        &g,
        &ms,
        &find_cycles(&g),
        &reqs,
        &costs(&ms),
        ModelOptions::default(),
    )
    .unwrap();
    if maximize {
        let terms = model.metric_terms(Metric::ExplicitInstructions, &ms);
        model.set_objective(terms, Sense::Maximize);
    }
    Some(model)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn solver_matches_enumeration(seed in 0u64..2000, frac in 0.0f64..0.9, maximize: bool) {
        let Some(model) = seeded_model(seed, frac, maximize) else { return Ok(()) };
        let s = solve(&model, LIMIT);
        match brute_force(&model) {
            None => prop_assert_eq!(s.status, Status::Infeasible),
            Some((best, _)) => {
                prop_assert_eq!(s.status, Status::Optimal);
                prop_assert!((s.objective - best).abs() < 1e-6, "solver {} vs enumeration {}", s.objective, best);
                let x = s.values.clone().unwrap();
                prop_assert!(model.feasible(&x));
                prop_assert!(linearization_exact(&model, &x));
            }
        }
    }

    #[test]
    fn extra_rows_never_help(seed in 0u64..2000, frac in 0.0f64..0.6, cap in 0usize..6) {
        let Some(model) = seeded_model(seed, frac, false) else { return Ok(()) };
        let base = solve(&model, LIMIT);
        let mut tighter = model.clone();
        let ms: Vec<(usize, f64)> = model.manifest_vars().values().map(|v| (*v, 1.0)).collect();
        tighter.add("cap", ms, f64::NEG_INFINITY, cap as f64);
        let t = solve(&tighter, LIMIT);
        if base.status == Status::Infeasible {
            prop_assert_eq!(t.status, Status::Infeasible);
        } else if t.status == Status::Optimal {
            prop_assert!(t.objective >= base.objective - 1e-9);
        }
    }

    #[test]
    fn solves_are_repeatable(seed in 0u64..2000, frac in 0.0f64..0.9) {
        let Some(model) = seeded_model(seed, frac, false) else { return Ok(()) };
        let a = solve(&model, LIMIT);
        let b = solve(&model, LIMIT);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn lp_round_trips(seed in 0u64..2000, frac in 0.0f64..0.9, maximize: bool) {
        let Some(model) = seeded_model(seed, frac, maximize) else { return Ok(()) };
        let back = parse_lp(&export_lp(&model)).unwrap();
        prop_assert_eq!(back, model);
    }
}

#[test]
fn presence_rows_follow_the_requirements() {
    // verifier needs one of two hashes; each hash needs the verifier
    let mut v = bare(3, ManifestKind::OH_VERIFY);
    v.constraints.push(protcomp::passes::Constraint::Present {
        dependent: v.id,
        required: vec![
            NodeRef::Manifest(ManifestId(1)),
            NodeRef::Manifest(ManifestId(2)),
        ],
        min_count: 1,
    });
    let mut hashes: Vec<Manifest> = (1..=2).map(|k| bare(k, ManifestKind::OH_HASH)).collect();
    for h in &mut hashes {
        h.constraints.push(protcomp::passes::Constraint::Present {
            dependent: h.id,
            required: vec![NodeRef::Manifest(ManifestId(3))],
            min_count: 1,
        });
    }
    let mut ms = hashes;
    ms.push(v);
    let g = build_graph(&ms, &ProgramModel::empty("p")).unwrap();
    let model = build_model(&g, &ms, &[], &[], &costs(&ms), ModelOptions::default()).unwrap();
    let feasible: BTreeSet<BTreeSet<ManifestId>> = (0u32..8)
        .map(|mask| {
            (1..=3)
                .filter(|k| mask >> (k - 1) & 1 == 1)
                .map(ManifestId)
                .collect::<BTreeSet<_>>()
        })
        .filter(|sel| model.feasible(&protcomp::ilp::complete_assignment(&model, sel)))
        .collect();
    let expected: BTreeSet<BTreeSet<ManifestId>> = [
        id_set(&[]),
        id_set(&[1, 3]),
        id_set(&[2, 3]),
        id_set(&[1, 2, 3]),
    ]
    .into_iter()
    .collect();
    assert_eq!(feasible, expected);
}
