//! Commands behind the `codesign` binary.
//!
//! Every command returns an [`Output`] holding the exit code and the text for
//! stdout (JSON, CSV or LP) and stderr (diagnostics). Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success (optimal design, sweep written, fully lowerable) |
//! | 1 | usage, file, parse or lowering error |
//! | 2 | infeasible |
//! | 3 | node or time limit reached |
//! | 4 | oracle disagreement |
//! | 5 | enumeration cap exceeded |

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use codesign_core::blp::{enumerate_optimum, solve, BlpSolution, Branching, SolverConfig};
use codesign_core::catalog::DEFAULT_ENUM_CAP;
use codesign_core::expr::{evaluate_choices, CompiledExpr, DesignSpec, Evaluator};
use codesign_core::lex::LEX_TOL;
use codesign_core::lower::{lower, provenance_json, write_lp, BlpInstance, LoweringReport};
use codesign_core::problem_file::{load_problem, Problem, Template};
use codesign_core::problems::{exact_vmax, team_summary, RobotSummary};
use codesign_core::solution::Status;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_LIMIT: i32 = 3;
pub const EXIT_ORACLE: i32 = 4;
pub const EXIT_CAP: i32 = 5;

/// Environment variable overriding the enumeration cap of `sweep` and `--oracle`.
pub const ENUM_CAP_VAR: &str = "CODESIGN_ENUM_CAP";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Output {
    fn fail(code: i32, message: impl std::fmt::Display) -> Self {
        Self {
            code,
            stdout: String::new(),
            stderr: format!("error: {message}\n"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "codesign", version, about = "Robot co-design by binary linear programming")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Lower and solve a problem; prints the solution as JSON.
    Solve(SolveArgs),
    /// Evaluate every design exactly; prints one CSV row per design.
    Sweep(SweepArgs),
    /// Lower a problem and print the lowering report as JSON.
    Validate(ProblemArgs),
}

#[derive(Debug, Args)]
struct ProblemArgs {
    /// Problem file (TOML).
    problem: PathBuf,
    /// Override a template parameter, e.g. `--param object_weight=80`.
    #[arg(long = "param", value_name = "KEY=VALUE", value_parser = parse_param)]
    params: Vec<(String, f64)>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Single-threaded search with no timing data on stdout.
    #[arg(long)]
    deterministic: bool,
    /// Wall-clock limit in seconds.
    #[arg(long, value_name = "SECONDS")]
    time_limit: Option<f64>,
    /// Stop after this many search nodes.
    #[arg(long, value_name = "NODES")]
    node_limit: Option<u64>,
    /// Branch on blocks in declaration order instead of smallest domain first.
    #[arg(long)]
    in_order: bool,
    /// Write the lowered problem in LP format.
    #[arg(long, value_name = "PATH")]
    export_lp: Option<PathBuf>,
    /// Write the variable and row provenance as JSON.
    #[arg(long, value_name = "PATH")]
    export_provenance: Option<PathBuf>,
    /// Cross-check the result against exhaustive enumeration.
    #[arg(long)]
    oracle: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Evaluate this many random designs instead of all of them.
    #[arg(long, value_name = "N")]
    sample: Option<u64>,
    /// Seed for `--sample`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    let value: f64 = value.trim().parse().map_err(|_| format!("`{value}` is not a number"))?;
    Ok((key.trim().to_string(), value))
}

/// Parses `args` (program name first) and runs the chosen command.
pub fn run<I, T>(args: I) -> Output
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                Output {
                    code: EXIT_ERROR,
                    stdout: String::new(),
                    stderr: text,
                }
            } else {
                Output {
                    code: EXIT_OK,
                    stdout: text,
                    stderr: String::new(),
                }
            };
        }
    };
    match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Validate(a) => cmd_validate(&a),
    }
}

/// Enumeration cap from [`ENUM_CAP_VAR`], else the library default.
pub fn enumeration_cap() -> Result<u128, String> {
    match std::env::var(ENUM_CAP_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("{ENUM_CAP_VAR}=`{v}` is not a non-negative integer")),
        Err(_) => Ok(DEFAULT_ENUM_CAP),
    }
}

fn load(args: &ProblemArgs) -> Result<Problem, Output> {
    load_problem(&args.problem, &args.params)
        .map_err(|e| Output::fail(EXIT_ERROR, format!("{}: {e}", args.problem.display())))
}

fn lower_problem(problem: &Problem) -> Result<(BlpInstance, LoweringReport), Output> {
    lower(&problem.spec).map_err(|e| Output::fail(EXIT_ERROR, format!("lowering failed: {e}")))
}

fn write_file(path: &Path, text: &str) -> Result<(), Output> {
    std::fs::write(path, text).map_err(|e| Output::fail(EXIT_ERROR, format!("cannot write `{}`: {e}", path.display())))
}

#[derive(Debug, Serialize)]
struct ModuleChoice {
    module: String,
    component: Option<String>,
}

#[derive(Debug, Serialize)]
struct ObjectiveReport {
    label: String,
    /// Value of the lowered objective the solver maximized.
    lowered: f64,
    /// Value of the source expression.
    exact: Option<f64>,
    /// Value of the surrogate, when one was lowered instead of the source.
    surrogate: Option<f64>,
}

#[derive(Debug, Serialize)]
struct DroneReport {
    surrogate_vmax: Option<f64>,
    exact_vmax: Option<f64>,
}

#[derive(Debug, Serialize)]
struct TeamReport {
    size: usize,
    sensorless: usize,
    robots: Vec<RobotSummary>,
}

#[derive(Debug, Serialize)]
struct OracleReport {
    designs: u64,
    agrees: bool,
    exactly_feasible: bool,
}

#[derive(Debug, Serialize)]
struct SolveReport {
    problem: String,
    status: &'static str,
    design: Vec<ModuleChoice>,
    objectives: Vec<ObjectiveReport>,
    cost: Option<f64>,
    node_count: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    drone: Option<DroneReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    team: Option<TeamReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleReport>,
}

fn solver_config(args: &SolveArgs) -> Result<SolverConfig, Output> {
    let time_limit = match args.time_limit {
        None => None,
        Some(t) if t.is_finite() && t >= 0.0 => Some(Duration::from_secs_f64(t)),
        Some(t) => return Err(Output::fail(EXIT_ERROR, format!("invalid --time-limit {t}"))),
    };
    Ok(SolverConfig {
        time_limit,
        node_limit: args.node_limit,
        branching: if args.in_order {
            Branching::InOrder
        } else {
            Branching::MostConstrained
        },
        deterministic: args.deterministic,
        ..SolverConfig::default()
    })
}

fn cmd_solve(args: &SolveArgs) -> Output {
    match solve_inner(args) {
        Ok(out) | Err(out) => out,
    }
}

fn solve_inner(args: &SolveArgs) -> Result<Output, Output> {
    let problem = load(&args.problem)?;
    let (inst, lowering) = lower_problem(&problem)?;
    if let Some(path) = &args.export_lp {
        write_file(path, &write_lp(&inst))?;
    }
    if let Some(path) = &args.export_provenance {
        write_file(path, &provenance_json(&inst, &lowering))?;
    }
    let config = solver_config(args)?;
    let sol = solve(&inst, &config).map_err(|e| Output::fail(EXIT_ERROR, e))?;
    let mut stderr = format!(
        "{}: {} after {} nodes in {:.3} s\n",
        problem.name,
        sol.status.as_str(),
        sol.node_count,
        sol.wall_time
    );
    let oracle = if args.oracle {
        match run_oracle(&problem.spec, &inst, &sol) {
            Ok(o) => Some(o),
            Err(message) => {
                stderr.push_str(&format!("warning: oracle skipped: {message}\n"));
                None
            }
        }
    } else {
        None
    };
    let report = solve_report(&problem, &sol, !args.deterministic, oracle).map_err(|e| Output::fail(EXIT_ERROR, e))?;
    let mut code = match sol.status {
        Status::Optimal => EXIT_OK,
        Status::Infeasible => EXIT_INFEASIBLE,
        Status::LimitReached => EXIT_LIMIT,
    };
    if let Some(o) = &report.oracle {
        if !(o.agrees && o.exactly_feasible) {
            stderr.push_str("error: oracle disagrees with the solver\n");
            code = EXIT_ORACLE;
        }
    }
    let mut stdout = serde_json::to_string_pretty(&report).expect("report serializes");
    stdout.push('\n');
    Ok(Output { code, stdout, stderr })
}

fn run_oracle(spec: &DesignSpec, inst: &BlpInstance, sol: &BlpSolution) -> Result<OracleReport, String> {
    let cap = enumeration_cap()?;
    let cap = u64::try_from(cap).unwrap_or(u64::MAX);
    let want = enumerate_optimum(inst, cap).map_err(|e| e.to_string())?;
    let values_agree = want.objective_values.len() == sol.objective_values.len()
        && want
            .objective_values
            .iter()
            .zip(&sol.objective_values)
            .all(|(a, b)| (a - b).abs() <= LEX_TOL * 1f64.max(a.abs()));
    let agrees = want.status == sol.status && want.choices == sol.choices && values_agree;
    let exactly_feasible = match &sol.choices {
        None => true,
        Some(choices) => Evaluator::new(spec)
            .and_then(|ev| ev.check(choices))
            .map(|r| r.is_feasible())
            .map_err(|e| e.to_string())?,
    };
    Ok(OracleReport {
        designs: want.node_count,
        agrees,
        exactly_feasible,
    })
}

fn solve_report(
    problem: &Problem,
    sol: &BlpSolution,
    timing: bool,
    oracle: Option<OracleReport>,
) -> Result<SolveReport, String> {
    let spec = &problem.spec;
    let space = &spec.space;
    let evaluator = Evaluator::new(spec).map_err(|e| e.to_string())?;
    let choices = sol.choices.as_deref();
    let design = match choices {
        None => Vec::new(),
        Some(choices) => space
            .modules()
            .iter()
            .zip(choices)
            .map(|(m, c)| ModuleChoice {
                module: m.module_id().to_string(),
                component: c.map(|j| m.component_names()[j].clone()),
            })
            .collect(),
    };
    let objectives = spec
        .objectives
        .iter()
        .zip(&sol.objective_values)
        .map(|(o, &lowered)| {
            let choices = choices.expect("values imply a design");
            ObjectiveReport {
                label: o.label.clone(),
                lowered,
                exact: evaluate_choices(space, &o.expr, choices).ok(),
                surrogate: o
                    .surrogate
                    .as_ref()
                    .and_then(|s| evaluate_choices(space, &s.expr, choices).ok()),
            }
        })
        .collect();
    let cost = choices.and_then(|c| evaluator.cost(c)).and_then(Result::ok);
    let drone = match (&problem.template, choices) {
        (Template::Drone(p), Some(c)) => Some(DroneReport {
            surrogate_vmax: spec.objectives[0]
                .surrogate
                .as_ref()
                .and_then(|s| evaluate_choices(space, &s.expr, c).ok()),
            exact_vmax: exact_vmax(space, c, p).ok(),
        }),
        _ => None,
    };
    let team = match (&problem.template, choices) {
        (Template::Transport(_), Some(c)) => {
            let robots = team_summary(space, c).map_err(|e| e.to_string())?;
            Some(TeamReport {
                size: robots.len(),
                sensorless: robots.iter().filter(|r| r.sensor.is_none()).count(),
                robots,
            })
        }
        _ => None,
    };
    Ok(SolveReport {
        problem: problem.name.clone(),
        status: sol.status.as_str(),
        design,
        objectives,
        cost,
        node_count: sol.node_count,
        wall_time: timing.then_some(sol.wall_time),
        drone,
        team,
        oracle,
    })
}

fn cmd_sweep(args: &SweepArgs) -> Output {
    match sweep_inner(args) {
        Ok(out) | Err(out) => out,
    }
}

/// Design indices to evaluate: all of them, or a sorted random sample.
fn sweep_indices(count: u128, sample: Option<u64>, seed: u64, cap: u128) -> Result<Vec<u128>, Output> {
    match sample {
        None if count > cap => Err(Output::fail(
            EXIT_CAP,
            format!("the space has {count} designs, above the enumeration cap of {cap}; use --sample N or raise {ENUM_CAP_VAR}"),
        )),
        None => Ok((0..count).collect()),
        Some(n) if u128::from(n) >= count => Ok((0..count).collect()),
        Some(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = std::collections::BTreeSet::new();
            while (picked.len() as u64) < n {
                picked.insert(rng.gen_range(0..count));
            }
            Ok(picked.into_iter().collect())
        }
    }
}

fn sweep_inner(args: &SweepArgs) -> Result<Output, Output> {
    let problem = load(&args.problem)?;
    let spec = &problem.spec;
    let space = &spec.space;
    let cap = enumeration_cap().map_err(|e| Output::fail(EXIT_ERROR, e))?;
    let indices = sweep_indices(space.design_count(), args.sample, args.seed, cap)?;
    let evaluator = Evaluator::new(spec).map_err(|e| Output::fail(EXIT_ERROR, e))?;
    let objectives: Vec<CompiledExpr> = spec
        .objectives
        .iter()
        .map(|o| CompiledExpr::compile(space, &o.expr))
        .collect::<Result<_, _>>()
        .map_err(|e| Output::fail(EXIT_ERROR, e))?;

    let rows: Vec<Result<Vec<String>, String>> = indices
        .par_iter()
        .map(|&i| {
            let choices = space.design_at(i);
            let feasible = evaluator.check(&choices).map_err(|e| e.to_string())?.is_feasible();
            let mut row = vec![i.to_string()];
            row.extend(space.modules().iter().zip(&choices).map(|(m, c)| match c {
                Some(j) => m.component_names()[*j].clone(),
                None => String::new(),
            }));
            row.extend(objectives.iter().map(|o| number(o.eval(space, &choices).ok())));
            row.push(number(evaluator.cost(&choices).and_then(Result::ok)));
            row.push(feasible.to_string());
            Ok(row)
        })
        .collect();

    let mut header = vec!["design_id".to_string()];
    header.extend(space.modules().iter().map(|m| m.module_id().to_string()));
    header.extend(spec.objectives.iter().map(|o| format!("objective_{}", o.label)));
    header.extend(["cost".to_string(), "feasible".to_string()]);
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut feasible = 0usize;
    writer.write_record(&header).expect("in-memory write");
    for row in rows {
        let row = row.map_err(|e| Output::fail(EXIT_ERROR, e))?;
        feasible += usize::from(row.last().is_some_and(|f| f == "true"));
        writer.write_record(&row).expect("in-memory write");
    }
    let bytes = writer.into_inner().expect("in-memory flush");
    Ok(Output {
        code: EXIT_OK,
        stdout: String::from_utf8(bytes).expect("CSV of UTF-8 fields"),
        stderr: format!("{}: {} designs, {feasible} feasible\n", problem.name, indices.len()),
    })
}

/// Shortest round-trip form; empty when the value is undefined.
fn number(v: Option<f64>) -> String {
    v.filter(|v| v.is_finite()).map(|v| v.to_string()).unwrap_or_default()
}

fn cmd_validate(args: &ProblemArgs) -> Output {
    let problem = match load(args) {
        Ok(p) => p,
        Err(out) => return out,
    };
    let (inst, report) = match lower_problem(&problem) {
        Ok(r) => r,
        Err(out) => return out,
    };
    let mut stderr = String::new();
    for e in &report.entries {
        stderr.push_str(&format!(
            "{:<24} {:<12} {:<22} {}\n",
            e.label,
            serde_json::to_value(e.role)
                .expect("role serializes")
                .as_str()
                .unwrap_or_default(),
            e.transform.as_str(),
            serde_json::to_value(e.exactness)
                .expect("exactness serializes")
                .as_str()
                .unwrap_or_default(),
        ));
    }
    stderr.push_str(&format!(
        "{} variables ({} lifted), {} rows, {} designs\n",
        inst.num_vars(),
        report.lifted_variables,
        report.rows,
        inst.design_count()
    ));
    let mut stdout = serde_json::to_string_pretty(&report).expect("report serializes");
    stdout.push('\n');
    Output {
        code: EXIT_OK,
        stdout,
        stderr,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_parse() {
        assert_eq!(parse_param("weight=80").unwrap(), ("weight".to_string(), 80.0));
        assert!(parse_param("weight").is_err());
        assert!(parse_param("weight=heavy").is_err());
    }

    #[test]
    fn sampling_is_sorted_distinct_and_seeded() {
        let a = sweep_indices(1000, Some(10), 7, 5).unwrap();
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, sweep_indices(1000, Some(10), 7, 5).unwrap());
        assert_eq!(sweep_indices(3, Some(10), 7, 5).unwrap(), vec![0, 1, 2]);
        assert_eq!(sweep_indices(6, None, 0, 5).unwrap_err().code, EXIT_CAP);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["codesign", "solve"]).code, EXIT_ERROR);
        assert_eq!(run(["codesign", "--help"]).code, EXIT_OK);
    }
}
