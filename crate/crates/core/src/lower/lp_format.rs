//! CPLEX-style LP text export and import.
//!
//! The first objective is the LP objective. Further lexicographic levels,
//! objective labels and constant offsets have no LP syntax and are written as
//! structured comments (`\ lex 2: ...`, `\ objective 2 label`, `\ offset 2: c`)
//! that external solvers ignore and [`read_lp`] understands.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde_json::json;
use thiserror::Error;

use super::{Block, BlockKind, BlpInstance, LoweringReport, ObjectiveRow, Row, Transform, VarOrigin, Variable};
use crate::expr::Sense;

const TERMS_PER_LINE: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("variable `{0}` is not declared binary")]
    NotBinary(String),
    #[error("unsupported LP section `{0}`")]
    Unsupported(String),
}

fn write_terms(out: &mut String, instance: &BlpInstance, terms: &[(usize, f64)], wrap: bool) {
    if terms.is_empty() {
        let _ = write!(out, " 0 {}", instance.variables[0].name);
        return;
    }
    for (k, (v, c)) in terms.iter().enumerate() {
        if wrap && k > 0 && k % TERMS_PER_LINE == 0 {
            out.push_str("\n   ");
        }
        let sign = if c.is_sign_negative() { '-' } else { '+' };
        let _ = write!(out, " {sign} {} {}", c.abs(), instance.variables[*v].name);
    }
}

/// Renders the instance in LP format.
pub fn write_lp(instance: &BlpInstance) -> String {
    let mut out = String::from("\\ co-design binary linear program\n");
    for (k, o) in instance.objectives.iter().enumerate() {
        let _ = writeln!(out, "\\ objective {} {}", k + 1, o.label.replace('\n', " "));
        if o.offset != 0.0 {
            let _ = writeln!(out, "\\ offset {}: {}", k + 1, o.offset);
        }
        if k > 0 {
            let _ = write!(out, "\\ lex {}:", k + 1);
            write_terms(&mut out, instance, &o.terms, false);
            out.push('\n');
        }
    }
    out.push_str("maximize\n obj:");
    let first = instance.objectives.first().map_or(&[][..], |o| &o.terms[..]);
    write_terms(&mut out, instance, first, true);
    out.push_str("\nsubject to\n");
    for r in &instance.rows {
        let _ = write!(out, " {}:", r.name);
        write_terms(&mut out, instance, &r.terms, true);
        let _ = writeln!(out, " {} {}", if r.sense == Sense::Le { "<=" } else { "=" }, r.rhs);
    }
    out.push_str("binary\n");
    for chunk in instance.variables.chunks(TERMS_PER_LINE) {
        let names: Vec<&str> = chunk.iter().map(|v| v.name.as_str()).collect();
        let _ = writeln!(out, " {}", names.join(" "));
    }
    out.push_str("end\n");
    out
}

/// Row, objective and variable provenance as pretty-printed JSON.
pub fn provenance_json(instance: &BlpInstance, report: &LoweringReport) -> String {
    let rows: Vec<_> = instance
        .rows
        .iter()
        .map(|r| json!({"name": r.name, "source": r.source, "transform": r.transform.as_str()}))
        .collect();
    let objectives: Vec<_> = instance
        .objectives
        .iter()
        .map(|o| json!({"label": o.label, "transform": o.transform.as_str(), "offset": o.offset}))
        .collect();
    let variables: Vec<_> = instance
        .variables
        .iter()
        .map(|v| json!({"name": v.name, "block": instance.blocks[v.block].name, "origin": v.origin}))
        .collect();
    let doc = json!({
        "rows": rows,
        "objectives": objectives,
        "variables": variables,
        "report": report,
    });
    serde_json::to_string_pretty(&doc).expect("provenance is serializable")
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Colon,
    Le,
    Ge,
    Eq,
}

fn tokenize(text: &str, line: usize) -> Result<Vec<Tok>, LpError> {
    let err = |message: String| LpError::Syntax { line, message };
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '+' => {
                out.push(Tok::Plus);
                i += 1;
            }
            '-' => {
                out.push(Tok::Minus);
                i += 1;
            }
            ':' => {
                out.push(Tok::Colon);
                i += 1;
            }
            '<' | '>' | '=' => {
                let mut op = String::from(c);
                i += 1;
                while i < chars.len() && matches!(chars[i], '<' | '>' | '=') {
                    op.push(chars[i]);
                    i += 1;
                }
                out.push(match op.as_str() {
                    "<" | "<=" | "=<" => Tok::Le,
                    ">" | ">=" | "=>" => Tok::Ge,
                    "=" | "==" => Tok::Eq,
                    _ => return Err(err(format!("unknown operator `{op}`"))),
                });
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || matches!(chars[i], 'e' | 'E')
                        || (matches!(chars[i], '+' | '-') && matches!(chars[i - 1], 'e' | 'E')))
                {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                out.push(Tok::Num(s.parse().map_err(|_| err(format!("bad number `{s}`")))?));
            }
            _ => {
                let start = i;
                while i < chars.len()
                    && !chars[i].is_whitespace()
                    && !matches!(chars[i], '+' | '-' | ':' | '<' | '>' | '=')
                {
                    i += 1;
                }
                out.push(Tok::Ident(chars[start..i].iter().collect()));
            }
        }
    }
    Ok(out)
}

/// Parses `[+|-] [coef] name ...` from `toks[*pos..]` up to a sense or the end.
fn parse_terms(toks: &[Tok], pos: &mut usize, line: usize) -> Result<Vec<(String, f64)>, LpError> {
    let mut terms = Vec::new();
    while *pos < toks.len() && !matches!(toks[*pos], Tok::Le | Tok::Ge | Tok::Eq) {
        let mut sign = 1.0;
        while let Some(t @ (Tok::Plus | Tok::Minus)) = toks.get(*pos) {
            if *t == Tok::Minus {
                sign = -sign;
            }
            *pos += 1;
        }
        let mut coef = 1.0;
        if let Some(Tok::Num(v)) = toks.get(*pos) {
            coef = *v;
            *pos += 1;
        }
        match toks.get(*pos) {
            Some(Tok::Ident(name)) => {
                terms.push((name.clone(), sign * coef));
                *pos += 1;
            }
            other => {
                return Err(LpError::Syntax {
                    line,
                    message: format!("expected a variable, found {other:?}"),
                })
            }
        }
    }
    Ok(terms)
}

#[derive(PartialEq, Clone, Copy)]
enum Section {
    Preamble,
    Objective,
    Rows,
    Bounds,
    Binary,
    End,
}

fn section_of(line: &str) -> Option<Section> {
    match line.trim().to_ascii_lowercase().as_str() {
        "maximize" | "maximise" | "maximum" | "max" | "minimize" | "minimise" | "minimum" | "min" => {
            Some(Section::Objective)
        }
        "subject to" | "such that" | "st" | "s.t." => Some(Section::Rows),
        "bounds" | "bound" => Some(Section::Bounds),
        "binary" | "binaries" | "bin" => Some(Section::Binary),
        "end" => Some(Section::End),
        _ => None,
    }
}

struct RawRow {
    name: String,
    terms: Vec<(String, f64)>,
    sense: Sense,
    rhs: f64,
}

/// Parses LP text into an instance.
///
/// Rows whose coefficients are all one with right-hand side one become
/// blocks (`=` exactly-one, `<=` at-most-one) when their variables are not
/// already in a block; every other variable becomes an at-most-one block of
/// its own. All variables must be declared binary.
pub fn read_lp(text: &str) -> Result<BlpInstance, LpError> {
    let mut section = Section::Preamble;
    let mut minimize = false;
    let mut labels: HashMap<usize, String> = HashMap::new();
    let mut offsets: HashMap<usize, f64> = HashMap::new();
    let mut extra: Vec<(usize, Vec<(String, f64)>)> = Vec::new();
    let mut objective_text: Vec<(usize, String)> = Vec::new();
    let mut row_text: Vec<(usize, String)> = Vec::new();
    let mut binaries: Vec<String> = Vec::new();
    let mut bounds: Vec<RawRow> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let syntax = |message: String| LpError::Syntax { line, message };
        if let Some(comment) = raw.trim_start().strip_prefix('\\') {
            let comment = comment.trim();
            if let Some(rest) = comment.strip_prefix("objective ") {
                let (k, label) = rest.split_once(' ').unwrap_or((rest, ""));
                let k: usize = k.parse().map_err(|_| syntax("bad objective index".into()))?;
                labels.insert(k, label.to_string());
            } else if let Some(rest) = comment.strip_prefix("offset ") {
                let (k, v) = rest
                    .split_once(':')
                    .ok_or_else(|| syntax("bad offset comment".into()))?;
                let k: usize = k.trim().parse().map_err(|_| syntax("bad offset index".into()))?;
                offsets.insert(k, v.trim().parse().map_err(|_| syntax("bad offset value".into()))?);
            } else if let Some(rest) = comment.strip_prefix("lex ") {
                let (k, terms) = rest.split_once(':').ok_or_else(|| syntax("bad lex comment".into()))?;
                let k: usize = k.trim().parse().map_err(|_| syntax("bad lex index".into()))?;
                let toks = tokenize(terms, line)?;
                let mut pos = 0;
                extra.push((k, parse_terms(&toks, &mut pos, line)?));
            }
            continue;
        }
        let body = raw.split('\\').next().unwrap_or("");
        if body.trim().is_empty() {
            continue;
        }
        if let Some(s) = section_of(body) {
            if s == Section::Objective {
                minimize = body.trim().to_ascii_lowercase().starts_with("min");
            }
            section = s;
            continue;
        }
        let lower = body.trim().to_ascii_lowercase();
        if ["general", "generals", "gen", "semi-continuous", "semis", "sos"].contains(&lower.as_str()) {
            return Err(LpError::Unsupported(lower));
        }
        match section {
            Section::Preamble => return Err(syntax("text before the objective section".into())),
            Section::Objective => objective_text.push((line, body.to_string())),
            Section::Rows => row_text.push((line, body.to_string())),
            Section::Bounds => {
                let toks = tokenize(body, line)?;
                if let [Tok::Ident(v), op, Tok::Num(b)] = toks.as_slice() {
                    let (sense, sign) = match op {
                        Tok::Le => (Sense::Le, 1.0),
                        Tok::Ge => (Sense::Le, -1.0),
                        _ => (Sense::Eq, 1.0),
                    };
                    bounds.push(RawRow {
                        name: format!("bound_{v}"),
                        terms: vec![(v.clone(), sign)],
                        sense,
                        rhs: sign * b,
                    });
                }
            }
            Section::Binary => binaries.extend(body.split_whitespace().map(str::to_string)),
            Section::End => {}
        }
    }

    let obj_line = objective_text.first().map_or(0, |(l, _)| *l);
    let joined: String = objective_text
        .iter()
        .map(|(_, s)| s.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let mut toks = tokenize(&joined, obj_line)?;
    if let [Tok::Ident(_), Tok::Colon, ..] = toks.as_slice() {
        toks.drain(..2);
    }
    let mut pos = 0;
    let first = parse_terms(&toks, &mut pos, obj_line)?;

    let mut rows = Vec::new();
    let mut pending: Vec<Tok> = Vec::new();
    let mut pending_line = 0;
    for (line, text) in &row_text {
        if pending.is_empty() {
            pending_line = *line;
        }
        pending.extend(tokenize(text, *line)?);
        let n = pending.len();
        let complete = n >= 2
            && matches!(pending[n - 2], Tok::Le | Tok::Ge | Tok::Eq)
            && matches!(pending[n - 1], Tok::Num(_))
            || n >= 3 && matches!(pending[n - 3], Tok::Le | Tok::Ge | Tok::Eq) && matches!(pending[n - 1], Tok::Num(_));
        if complete {
            rows.push(parse_row(&pending, pending_line, rows.len())?);
            pending.clear();
        }
    }
    if !pending.is_empty() {
        return Err(LpError::Syntax {
            line: pending_line,
            message: "incomplete constraint".into(),
        });
    }
    rows.extend(bounds);

    // Variables in first-appearance order.
    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut see = |name: &str| {
        if !index.contains_key(name) {
            index.insert(name.to_string(), order.len());
            order.push(name.to_string());
        }
    };
    first.iter().for_each(|(v, _)| see(v));
    extra.iter().flat_map(|(_, t)| t).for_each(|(v, _)| see(v));
    rows.iter().flat_map(|r| &r.terms).for_each(|(v, _)| see(v));
    binaries.iter().for_each(|v| see(v));
    let declared: std::collections::HashSet<&str> = binaries.iter().map(String::as_str).collect();
    if let Some(v) = order.iter().find(|v| !declared.contains(v.as_str())) {
        return Err(LpError::NotBinary(v.clone()));
    }

    // Blocks from one-hot rows, then singletons.
    let mut block_of: Vec<Option<usize>> = vec![None; order.len()];
    let mut groups: Vec<(String, bool, Vec<usize>)> = Vec::new();
    for r in &rows {
        let one_hot = !r.terms.is_empty() && r.rhs == 1.0 && r.terms.iter().all(|(_, c)| *c == 1.0);
        if !one_hot {
            continue;
        }
        let vars: Vec<usize> = r.terms.iter().map(|(v, _)| index[v]).collect();
        let mut distinct = vars.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() != vars.len() || vars.iter().any(|&v| block_of[v].is_some()) {
            continue;
        }
        for &v in &vars {
            block_of[v] = Some(groups.len());
        }
        let name = r.name.strip_prefix("sos_").unwrap_or(&r.name).to_string();
        groups.push((name, r.sense == Sense::Le, vars));
    }
    for v in 0..order.len() {
        if block_of[v].is_none() {
            block_of[v] = Some(groups.len());
            groups.push((order[v].clone(), true, vec![v]));
        }
    }
    let mut new_index = vec![0; order.len()];
    let mut variables = Vec::with_capacity(order.len());
    let mut blocks = Vec::with_capacity(groups.len());
    for (b, (name, optional, vars)) in groups.into_iter().enumerate() {
        let start = variables.len();
        for &v in &vars {
            new_index[v] = variables.len();
            variables.push(Variable {
                name: order[v].clone(),
                block: b,
                origin: VarOrigin::Imported,
            });
        }
        blocks.push(Block {
            name,
            start,
            len: vars.len(),
            optional,
            kind: BlockKind::Module,
        });
    }
    let remap = |terms: &[(String, f64)]| -> Vec<(usize, f64)> {
        let mut acc: Vec<(usize, f64)> = Vec::new();
        for (v, c) in terms {
            acc.push((new_index[index[v]], *c));
        }
        acc.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(acc.len());
        for (v, c) in acc {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        merged
    };
    let sign = if minimize { -1.0 } else { 1.0 };
    let mut levels: Vec<(usize, Vec<(String, f64)>)> = Vec::new();
    if !labels.is_empty() || first.iter().any(|(_, c)| *c != 0.0) {
        levels.push((1, first));
    }
    extra.sort_by_key(|e| e.0);
    levels.extend(extra);
    let objectives = levels
        .into_iter()
        .map(|(k, terms)| {
            let mut terms = remap(&terms);
            terms.iter_mut().for_each(|t| t.1 *= sign);
            ObjectiveRow {
                label: labels.get(&k).cloned().unwrap_or_else(|| format!("objective_{k}")),
                transform: Transform::LinearPassthrough,
                terms,
                offset: sign * offsets.get(&k).copied().unwrap_or(0.0),
            }
        })
        .collect();
    let rows = rows
        .into_iter()
        .map(|r| {
            let terms = remap(&r.terms);
            let transform = if blocks
                .iter()
                .any(|b| b.name == r.name.strip_prefix("sos_").unwrap_or(&r.name))
                && r.terms.iter().all(|(_, c)| *c == 1.0)
            {
                Transform::OneHot
            } else {
                Transform::LinearPassthrough
            };
            Row {
                source: r.name.clone(),
                name: r.name,
                transform,
                terms,
                sense: r.sense,
                rhs: r.rhs,
            }
        })
        .collect();
    Ok(BlpInstance {
        variables,
        blocks,
        objectives,
        rows,
    })
}

fn parse_row(toks: &[Tok], line: usize, index: usize) -> Result<RawRow, LpError> {
    let mut pos = 0;
    let name = match toks {
        [Tok::Ident(n), Tok::Colon, ..] => {
            pos = 2;
            n.clone()
        }
        _ => format!("c{}", index + 1),
    };
    let terms = parse_terms(toks, &mut pos, line)?;
    let op = toks.get(pos).cloned();
    pos += 1;
    let mut sign = 1.0;
    if let Some(Tok::Minus) = toks.get(pos) {
        sign = -1.0;
        pos += 1;
    } else if let Some(Tok::Plus) = toks.get(pos) {
        pos += 1;
    }
    let rhs = match toks.get(pos) {
        Some(Tok::Num(v)) => sign * v,
        other => {
            return Err(LpError::Syntax {
                line,
                message: format!("expected a right-hand side, found {other:?}"),
            })
        }
    };
    Ok(match op {
        Some(Tok::Le) => RawRow {
            name,
            terms,
            sense: Sense::Le,
            rhs,
        },
        Some(Tok::Ge) => RawRow {
            name,
            terms: terms.into_iter().map(|(v, c)| (v, -c)).collect(),
            sense: Sense::Le,
            rhs: -rhs,
        },
        _ => RawRow {
            name,
            terms,
            sense: Sense::Eq,
            rhs,
        },
    })
}
