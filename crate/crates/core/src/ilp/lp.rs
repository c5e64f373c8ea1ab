//! CPLEX LP text format.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::model::{IlpModel, LinearConstraint, Sense, VarRole};
use crate::error::{Error, Result};

fn write_expr(out: &mut String, model: &IlpModel, terms: &[(usize, f64)]) {
    if terms.is_empty() {
        out.push_str(" 0");
        return;
    }
    for (k, (v, c)) in terms.iter().enumerate() {
        let name = model.vars[*v].name();
        let (sign, mag) = if *c < 0.0 { ("-", -c) } else { ("+", *c) };
        if k == 0 {
            if sign == "-" {
                out.push_str(" -");
            }
        } else {
            let _ = write!(out, " {sign}");
        }
        if mag == 1.0 {
            let _ = write!(out, " {name}");
        } else {
            let _ = write!(out, " {mag} {name}");
        }
    }
}

/// Render `model`. Rows bounded on both sides become `<name>_lo` / `<name>_hi`.
pub fn export_lp(model: &IlpModel) -> String {
    let mut out = String::new();
    out.push_str(match model.sense {
        Sense::Minimize => "Minimize\n",
        Sense::Maximize => "Maximize\n",
    });
    out.push_str(" obj:");
    write_expr(&mut out, model, &model.objective);
    out.push_str("\nSubject To\n");
    for c in &model.constraints {
        let mut row = |suffix: &str, op: &str, rhs: f64| {
            let _ = write!(out, " {}{}:", c.name, suffix);
            write_expr(&mut out, model, &c.terms);
            let _ = writeln!(out, " {op} {rhs}");
        };
        match (c.lo.is_finite(), c.hi.is_finite()) {
            (true, true) if c.lo == c.hi => row("", "=", c.lo),
            (true, true) => {
                row("_lo", ">=", c.lo);
                row("_hi", "<=", c.hi);
            }
            (true, false) => row("", ">=", c.lo),
            (false, true) => row("", "<=", c.hi),
            (false, false) => {}
        }
    }
    out.push_str("Binary\n");
    for v in &model.vars {
        let _ = writeln!(out, " {}", v.name());
    }
    out.push_str("End\n");
    out
}

fn parse_expr(
    tokens: &[&str],
    index: &mut BTreeMap<String, usize>,
    vars: &mut Vec<VarRole>,
) -> Result<Vec<(usize, f64)>> {
    let mut terms = Vec::new();
    let mut sign = 1.0;
    let mut coef: Option<f64> = None;
    for t in tokens {
        match *t {
            "+" => sign = 1.0,
            "-" => sign = -1.0,
            _ => {
                if let Ok(c) = t.parse::<f64>() {
                    coef = Some(c);
                    continue;
                }
                let role =
                    VarRole::parse(t).ok_or_else(|| Error::Parse(format!("bad variable `{t}`")))?;
                let v = *index.entry(t.to_string()).or_insert_with(|| {
                    vars.push(role);
                    vars.len() - 1
                });
                terms.push((v, sign * coef.take().unwrap_or(1.0)));
                sign = 1.0;
            }
        }
    }
    Ok(terms)
}

/// Parse text produced by [`export_lp`]. Split `_lo`/`_hi` rows are joined back.
pub fn parse_lp(text: &str) -> Result<IlpModel> {
    #[derive(PartialEq)]
    enum Section {
        Start,
        Objective,
        Rows,
        Binary,
        Done,
    }
    let mut section = Section::Start;
    let mut sense = Sense::Minimize;
    let mut vars: Vec<VarRole> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut objective = Vec::new();
    let mut rows: Vec<LinearConstraint> = Vec::new();
    let mut binaries = Vec::new();

    for line in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('\\'))
    {
        match line {
            "Minimize" | "Maximize" => {
                sense = if line == "Minimize" {
                    Sense::Minimize
                } else {
                    Sense::Maximize
                };
                section = Section::Objective;
                continue;
            }
            "Subject To" => {
                section = Section::Rows;
                continue;
            }
            "Binary" => {
                section = Section::Binary;
                continue;
            }
            "End" => {
                section = Section::Done;
                continue;
            }
            _ => {}
        }
        match section {
            Section::Objective => {
                let body = line.split_once(':').map_or(line, |(_, b)| b);
                let tokens: Vec<&str> = body.split_whitespace().collect();
                objective = parse_expr(&tokens, &mut index, &mut vars)?;
            }
            Section::Rows => {
                let (name, body) = line
                    .split_once(':')
                    .ok_or_else(|| Error::Parse(format!("row without name: {line}")))?;
                let tokens: Vec<&str> = body.split_whitespace().collect();
                let op_at = tokens
                    .iter()
                    .position(|t| matches!(*t, "<=" | ">=" | "="))
                    .ok_or_else(|| Error::Parse(format!("row without comparison: {line}")))?;
                let rhs: f64 = tokens
                    .get(op_at + 1)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("bad right-hand side: {line}")))?;
                let terms = parse_expr(&tokens[..op_at], &mut index, &mut vars)?;
                let (lo, hi) = match tokens[op_at] {
                    "<=" => (f64::NEG_INFINITY, rhs),
                    ">=" => (rhs, f64::INFINITY),
                    _ => (rhs, rhs),
                };
                let name = name.trim();
                if let Some(base) = name.strip_suffix("_hi") {
                    if let Some(prev) = rows.last_mut() {
                        if prev.name == format!("{base}_lo") && prev.terms == terms {
                            prev.name = base.to_string();
                            prev.hi = hi;
                            continue;
                        }
                    }
                }
                rows.push(LinearConstraint {
                    name: name.to_string(),
                    terms,
                    lo,
                    hi,
                });
            }
            Section::Binary => binaries.extend(line.split_whitespace().map(str::to_string)),
            Section::Start | Section::Done => {
                return Err(Error::Parse(format!("unexpected line: {line}")));
            }
        }
    }
    if section != Section::Done {
        return Err(Error::Parse("missing End".into()));
    }

    // declared order wins, so variable indices survive the round trip
    let mut order: Vec<VarRole> = Vec::with_capacity(binaries.len());
    for b in &binaries {
        order.push(VarRole::parse(b).ok_or_else(|| Error::Parse(format!("bad variable `{b}`")))?);
    }
    for v in &vars {
        if !order.contains(v) {
            return Err(Error::Parse(format!(
                "variable {} not declared binary",
                v.name()
            )));
        }
    }
    let remap: Vec<usize> = vars
        .iter()
        .map(|v| order.iter().position(|o| o == v).expect("checked"))
        .collect();
    let fix = |terms: Vec<(usize, f64)>| terms.into_iter().map(|(v, c)| (remap[v], c)).collect();
    Ok(IlpModel {
        vars: order,
        constraints: rows
            .into_iter()
            .map(|mut r| {
                r.terms = fix(std::mem::take(&mut r.terms));
                r
            })
            .collect(),
        objective: fix(objective),
        sense,
    })
}
