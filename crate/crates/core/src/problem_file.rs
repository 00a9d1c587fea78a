//! Problem files: TOML documents holding module catalogs and either infix
//! objectives and constraints or a reference-problem template.
//!
//! ```toml
//! name = "toy"
//! maximize = ["feat(motor, thrust)"]
//! subject_to = [
//!     "feat(motor, cost) + feat(frame, cost) <= 1000",
//!     { label = "fit", expr = "feat(motor, size) <= feat(frame, length)", class = "implicit" },
//! ]
//! cost = "feat(motor, cost) + feat(frame, cost)"
//!
//! [module.motor]
//! features = ["cost [usd]", "thrust [N]", "size [m]"]
//! components = [["m1", 300, 4, 0.1], ["m2", 700, 6, 0.2]]
//!
//! [module.frame]
//! csv = "frames.csv"
//!
//! [[compat]]
//! a = "motor"
//! component = "m2"
//! b = "frame"
//! subset = ["f2"]
//! polarity = "incompatible"
//! ```
//!
//! With `template = "drone"` or `template = "transport"` the objectives and
//! core constraints come from the reference builders, configured by an
//! optional `[params]` table; extra `subject_to`, `compat` and `restrict`
//! entries are appended.

use std::path::Path;

use crate::catalog::{space_from_table, CatalogError, DesignSpace};
use crate::expr::{
    parse_expr, CompatRule, Constraint, ConstraintClass, DesignSpec, Objective, ParseError, Polarity, Restriction,
    SpecError,
};
use crate::problems::{
    build_drone_spec, build_transport_spec, Coverage, DroneParams, ProblemError, TransportCatalogs, TransportParams,
};

#[derive(Debug, thiserror::Error)]
pub enum ProblemFileError {
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("invalid TOML: {0}")]
    Toml(String),
    #[error("{location}: {message}")]
    Schema { location: String, message: String },
    #[error("{location}: {source}")]
    Parse { location: String, source: ParseError },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Spec(#[from] SpecError),
}

fn schema(location: impl Into<String>, message: impl Into<String>) -> ProblemFileError {
    ProblemFileError::Schema {
        location: location.into(),
        message: message.into(),
    }
}

/// Which builder produced the spec, with the parameters it used.
#[derive(Debug, Clone, PartialEq)]
pub enum Template {
    Generic,
    Drone(DroneParams),
    Transport(TransportParams),
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub template: Template,
    pub spec: DesignSpec,
}

const TOP_KEYS: [&str; 9] = [
    "name",
    "template",
    "params",
    "module",
    "maximize",
    "subject_to",
    "cost",
    "compat",
    "restrict",
];

/// Reads a problem file; CSV sidecars resolve relative to its directory.
pub fn load_problem(path: &Path, overrides: &[(String, f64)]) -> Result<Problem, ProblemFileError> {
    let source = std::fs::read_to_string(path).map_err(|e| ProblemFileError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    let mut problem = parse_problem(&source, path.parent(), overrides)?;
    if problem.name.is_empty() {
        problem.name = stem.unwrap_or_default();
    }
    Ok(problem)
}

/// Parses a problem document. `overrides` replace template parameters.
pub fn parse_problem(
    source: &str,
    base_dir: Option<&Path>,
    overrides: &[(String, f64)],
) -> Result<Problem, ProblemFileError> {
    let table: toml::Table = source
        .parse()
        .map_err(|e: toml::de::Error| ProblemFileError::Toml(e.to_string()))?;
    if let Some(key) = table.keys().find(|k| !TOP_KEYS.contains(&k.as_str())) {
        return Err(schema(key.clone(), "unknown top-level key"));
    }
    let name = match table.get("name") {
        None => String::new(),
        Some(toml::Value::String(s)) => s.clone(),
        Some(_) => return Err(schema("name", "expected a string")),
    };
    let space = space_from_table(&table, base_dir)?;
    let template = match table.get("template") {
        None => None,
        Some(toml::Value::String(s)) => Some(s.as_str()),
        Some(_) => return Err(schema("template", "expected a string")),
    };
    let params = match table.get("params") {
        None => None,
        Some(toml::Value::Table(t)) => Some(t),
        Some(_) => return Err(schema("params", "expected a table")),
    };
    let (template, mut spec) = match template {
        None => {
            if params.is_some() {
                return Err(schema("params", "parameters need a template"));
            }
            if let Some((key, _)) = overrides.first() {
                return Err(ProblemError::UnknownParam(key.clone()).into());
            }
            let mut spec = DesignSpec::new(space);
            for objective in objectives(&table)? {
                spec = spec.maximize(objective);
            }
            (Template::Generic, spec)
        }
        Some(kind) => {
            if table.contains_key("maximize") {
                return Err(schema("maximize", "a template defines its own objectives"));
            }
            build_template(kind, space, params, overrides)?
        }
    };
    for c in constraints(&table)? {
        spec = spec.subject_to(c);
    }
    if let Some(cost) = table.get("cost") {
        let src = cost
            .as_str()
            .ok_or_else(|| schema("cost", "expected an expression string"))?;
        spec.cost = Some(parse_expr(src).map_err(|source| ProblemFileError::Parse {
            location: "cost".into(),
            source,
        })?);
    }
    for rule in compat_rules(&table)? {
        spec = spec.compat(rule);
    }
    for r in restrictions(&table)? {
        spec = spec.restrict(r);
    }
    spec.validate()?;
    Ok(Problem { name, template, spec })
}

fn build_template(
    kind: &str,
    space: DesignSpace,
    params: Option<&toml::Table>,
    overrides: &[(String, f64)],
) -> Result<(Template, DesignSpec), ProblemFileError> {
    let entries = params.into_iter().flatten();
    match kind {
        "drone" => {
            let mut p = DroneParams::default();
            for (key, value) in entries {
                p.set(key, number(&format!("params.{key}"), value)?)?;
            }
            for (key, value) in overrides {
                p.set(key, *value)?;
            }
            let spec = build_drone_spec(space, &p)?;
            Ok((Template::Drone(p), spec))
        }
        "transport" => {
            let mut p = TransportParams::default();
            for (key, value) in entries {
                let loc = format!("params.{key}");
                match (key.as_str(), value) {
                    ("coverage", toml::Value::String(s)) => {
                        p.coverage = match s.as_str() {
                            "team" => Coverage::Team,
                            "per-robot" => Coverage::PerRobot,
                            _ => return Err(schema(loc, "expected \"team\" or \"per-robot\"")),
                        }
                    }
                    ("symmetry_breaking", toml::Value::Boolean(b)) => p.symmetry_breaking = *b,
                    _ => p.set(key, number(&loc, value)?)?,
                }
            }
            for (key, value) in overrides {
                p.set(key, *value)?;
            }
            let catalogs = TransportCatalogs::from_space(&space)?;
            let spec = build_transport_spec(&catalogs, &p)?;
            Ok((Template::Transport(p), spec))
        }
        other => Err(schema("template", format!("unknown template `{other}`"))),
    }
}

fn number(location: &str, value: &toml::Value) -> Result<f64, ProblemFileError> {
    match value {
        toml::Value::Float(x) => Ok(*x),
        toml::Value::Integer(x) => Ok(*x as f64),
        _ => Err(schema(location, "expected a number")),
    }
}

fn array<'a>(table: &'a toml::Table, key: &str) -> Result<&'a [toml::Value], ProblemFileError> {
    match table.get(key) {
        None => Ok(&[]),
        Some(toml::Value::Array(items)) => Ok(items),
        Some(_) => Err(schema(key, "expected an array")),
    }
}

fn string_field<'a>(t: &'a toml::Table, location: &str, key: &str) -> Result<Option<&'a str>, ProblemFileError> {
    match t.get(key) {
        None => Ok(None),
        Some(toml::Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(schema(format!("{location}.{key}"), "expected a string")),
    }
}

fn required<'a>(t: &'a toml::Table, location: &str, key: &str) -> Result<&'a str, ProblemFileError> {
    string_field(t, location, key)?.ok_or_else(|| schema(format!("{location}.{key}"), "missing"))
}

fn check_keys(t: &toml::Table, location: &str, allowed: &[&str]) -> Result<(), ProblemFileError> {
    match t.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(schema(format!("{location}.{k}"), "unknown key")),
        None => Ok(()),
    }
}

/// `(label, expression source, table)` of an entry written either as a bare
/// string or as `{ label = .., expr = .. }`.
fn entry<'a>(
    value: &'a toml::Value,
    location: &str,
    default_label: String,
    allowed: &[&str],
) -> Result<(String, &'a str, Option<&'a toml::Table>), ProblemFileError> {
    match value {
        toml::Value::String(s) => Ok((default_label, s, None)),
        toml::Value::Table(t) => {
            check_keys(t, location, allowed)?;
            let label = string_field(t, location, "label")?.map_or(default_label, str::to_string);
            Ok((label, required(t, location, "expr")?, Some(t)))
        }
        _ => Err(schema(location, "expected a string or a table")),
    }
}

fn objectives(table: &toml::Table) -> Result<Vec<Objective>, ProblemFileError> {
    array(table, "maximize")?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let location = format!("maximize[{i}]");
            let (label, src, _) = entry(v, &location, format!("objective_{}", i + 1), &["label", "expr"])?;
            let expr = parse_expr(src).map_err(|source| ProblemFileError::Parse { location, source })?;
            Ok(Objective::new(label, expr))
        })
        .collect()
}

fn constraints(table: &toml::Table) -> Result<Vec<Constraint>, ProblemFileError> {
    array(table, "subject_to")?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let location = format!("subject_to[{i}]");
            let (label, src, t) = entry(
                v,
                &location,
                format!("constraint_{}", i + 1),
                &["label", "expr", "class"],
            )?;
            let mut c = Constraint::parse(label, src).map_err(|source| ProblemFileError::Parse {
                location: location.clone(),
                source,
            })?;
            if let Some(t) = t {
                c.class = match string_field(t, &location, "class")? {
                    None | Some("system") => ConstraintClass::System,
                    Some("implicit") => ConstraintClass::Implicit,
                    Some(_) => {
                        return Err(schema(
                            format!("{location}.class"),
                            "expected \"system\" or \"implicit\"",
                        ))
                    }
                };
            }
            Ok(c)
        })
        .collect()
}

fn string_list(t: &toml::Table, location: &str, key: &str) -> Result<Vec<String>, ProblemFileError> {
    let loc = format!("{location}.{key}");
    match t.get(key) {
        Some(toml::Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| schema(&loc, "expected strings"))
            })
            .collect(),
        Some(_) => Err(schema(loc, "expected an array of component names")),
        None => Err(schema(loc, "missing")),
    }
}

fn tables<'a>(table: &'a toml::Table, key: &str) -> Result<Vec<(String, &'a toml::Table)>, ProblemFileError> {
    array(table, key)?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let location = format!("{key}[{i}]");
            v.as_table()
                .map(|t| (location.clone(), t))
                .ok_or_else(|| schema(location, "expected a table"))
        })
        .collect()
}

fn compat_rules(table: &toml::Table) -> Result<Vec<CompatRule>, ProblemFileError> {
    tables(table, "compat")?
        .into_iter()
        .enumerate()
        .map(|(i, (loc, t))| {
            check_keys(t, &loc, &["label", "a", "component", "b", "subset", "polarity"])?;
            let polarity = match string_field(t, &loc, "polarity")? {
                None | Some("compatible") => Polarity::Compatible,
                Some("incompatible") => Polarity::Incompatible,
                Some(_) => {
                    return Err(schema(
                        format!("{loc}.polarity"),
                        "expected \"compatible\" or \"incompatible\"",
                    ))
                }
            };
            Ok(CompatRule {
                label: string_field(t, &loc, "label")?.map_or(format!("compat_{}", i + 1), str::to_string),
                a: required(t, &loc, "a")?.to_string(),
                component: required(t, &loc, "component")?.to_string(),
                b: required(t, &loc, "b")?.to_string(),
                subset: string_list(t, &loc, "subset")?,
                polarity,
            })
        })
        .collect()
}

fn restrictions(table: &toml::Table) -> Result<Vec<Restriction>, ProblemFileError> {
    tables(table, "restrict")?
        .into_iter()
        .enumerate()
        .map(|(i, (loc, t))| {
            check_keys(t, &loc, &["label", "module", "subset"])?;
            Ok(Restriction {
                label: string_field(t, &loc, "label")?.map_or(format!("restrict_{}", i + 1), str::to_string),
                module: required(t, &loc, "module")?.to_string(),
                subset: string_list(t, &loc, "subset")?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"
name = "toy"
maximize = ["feat(motor, thrust)", { label = "light", expr = "-feat(frame, weight)" }]
subject_to = [
    "feat(motor, cost) + feat(frame, cost) <= 1000",
    { label = "fit", expr = "feat(motor, size) <= feat(frame, length)", class = "implicit" },
]
cost = "feat(motor, cost) + feat(frame, cost)"

[module.motor]
features = ["cost [usd]", "thrust [N]", "size [m]"]
components = [["m1", 300, 4, 0.1], ["m2", 700, 6, 0.2]]

[module.frame]
features = ["cost", "weight", "length"]
components = [["f1", 100, 0.5, 0.15], ["f2", 250, 0.3, 0.25]]

[[compat]]
a = "motor"
component = "m2"
b = "frame"
subset = ["f1"]
polarity = "incompatible"

[[restrict]]
module = "frame"
subset = ["f1", "f2"]
"#;

    #[test]
    fn parses_a_generic_problem() {
        let p = parse_problem(TOY, None, &[]).unwrap();
        assert_eq!(p.name, "toy");
        assert_eq!(p.template, Template::Generic);
        assert_eq!(p.spec.objectives.len(), 2);
        assert_eq!(p.spec.objectives[1].label, "light");
        assert_eq!(p.spec.constraints[0].label, "constraint_1");
        assert_eq!(p.spec.constraints[1].class, ConstraintClass::Implicit);
        assert_eq!(p.spec.compat_rules[0].polarity, Polarity::Incompatible);
        assert_eq!(p.spec.restrictions[0].label, "restrict_1");
        assert!(p.spec.cost.is_some());
    }

    #[test]
    fn errors_carry_locations() {
        let bad = TOY.replace(
            "\"feat(motor, cost) + feat(frame, cost) <= 1000\"",
            "\"feat(motor, cost) <=\"",
        );
        let err = parse_problem(&bad, None, &[]).unwrap_err();
        assert!(err.to_string().starts_with("subject_to[0]"), "{err}");
        let err = parse_problem(&format!("bogus = 1\n{TOY}"), None, &[]).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = parse_problem(TOY, None, &[("weight".into(), 1.0)]).unwrap_err();
        assert!(matches!(err, ProblemFileError::Problem(ProblemError::UnknownParam(_))));
        let err = parse_problem("maximize = [", None, &[]).unwrap_err();
        assert!(matches!(err, ProblemFileError::Toml(_)));
    }
}
