//! `lattice-homog` command line.
//!
//! Every command builds one JSON value; the CSV and human renderings are
//! derived from it, so the three formats always carry the same numbers.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use lattice_homog::asymptotic::{convergence_study, tiling_bound};
use lattice_homog::bvp::{epsilon_convergence_study, BoxDomain, Datum, Epsilon, StudyOptions};
use lattice_homog::cell::{homogenized_tensor, solve_corrector, CellOptions};
use lattice_homog::coarse::{
    check_poincare, check_poincare_wirtinger, check_two_connectedness, compute_path_constants,
};
use lattice_homog::fixtures;
use lattice_homog::{parse, validate, Convention, LatticeGraph};

pub const SCHEMA: &str = "lattice-homog/1";

/// Environment variable that caps the worker pool.
pub const THREADS_ENV: &str = "LATTICE_HOMOG_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ConventionArg {
    Double,
    Single,
}

impl From<ConventionArg> for Convention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::Double => Convention::Double,
            ConventionArg::Single => Convention::Single,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "lattice-homog",
    version,
    about = "Homogenized energies of periodic graphs on cylindrical lattice subsets"
)]
struct Cli {
    /// Output format.
    #[arg(long, value_enum, global = true, default_value = "json")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Edge counting: ordered pairs (double) or undirected edges (single).
    #[arg(long, value_enum, default_value = "double")]
    convention: ConventionArg,
    /// Relative solver tolerance.
    #[arg(long, default_value_t = 1e-10, value_parser = positive_f64)]
    tol: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the standing assumptions on a graph.
    Validate { file: PathBuf },
    /// Solve the cell problem: f_hom per axis, the tensor and correctors.
    Cell {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-window values f_0^K against f_hom, and tiling bounds.
    Asymptotic {
        file: PathBuf,
        /// Window sizes in cells.
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
        k: Vec<usize>,
        /// Slope; defaults to e_1.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        z: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Empirical checks of the coarse-graining inequalities.
    Inequalities {
        file: PathBuf,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Cube sides (in cells) for the Poincaré scaling check.
        #[arg(long, value_delimiter = ',', default_value = "32,64")]
        poincare_cells: Vec<usize>,
        /// Allowed spread of C / diam^2 across one doubling.
        #[arg(long, default_value_t = 1.25)]
        poincare_factor: f64,
    },
    /// Dirichlet problems at several eps against the homogenized problem.
    Bvp {
        file: PathBuf,
        /// Box bounds: `lo,hi` (same on every axis) or `lo1,hi1,...,lod,hid`.
        #[arg(long, value_delimiter = ',', default_value = "0,1", allow_hyphen_values = true)]
        omega: Vec<f64>,
        /// Boundary datum in x (and y).
        #[arg(long, default_value = "x")]
        phi: String,
        /// Scales as exact rationals.
        #[arg(long, value_delimiter = ',', default_value = "1/4,1/8,1/16,1/32")]
        eps: Vec<String>,
        /// Boundary band width in lattice units; defaults to T.
        #[arg(long)]
        r: Option<i64>,
        #[command(flatten)]
        common: Common,
    },
    /// Bundled example graphs.
    Examples {
        #[command(subcommand)]
        action: ExamplesAction,
    },
}

#[derive(Debug, Subcommand)]
enum ExamplesAction {
    /// List bundled graphs.
    List,
    /// Write one bundled graph (or all with `--all`) as LGF.
    Export {
        name: Option<String>,
        /// Output directory; without it the source goes to stdout.
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long)]
        all: bool,
    },
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

/// A rendered command result.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub body: Value,
    pub csv_header: Vec<&'static str>,
    pub csv_rows: Vec<Vec<Value>>,
    pub passed: bool,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    kind: &'static str,
    message: String,
    detail: Value,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            kind: "usage",
            message: message.into(),
            detail: Value::Null,
        }
    }

    fn input(kind: &'static str, message: impl ToString) -> Self {
        Failure {
            code: 1,
            kind,
            message: message.to_string(),
            detail: Value::Null,
        }
    }
}

fn load(path: &Path) -> Result<LatticeGraph, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure {
        code: 2,
        kind: "io",
        message: if e.kind() == std::io::ErrorKind::NotFound {
            format!("file not found: {}", path.display())
        } else {
            format!("cannot read {}: {e}", path.display())
        },
        detail: Value::Null,
    })?;
    parse(&text).map_err(|e| Failure {
        code: 1,
        kind: "parse",
        message: e.to_string(),
        detail: serde_json::to_value(&e).unwrap_or(Value::Null),
    })
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn with_header(command: &str, config: Value, fields: Value) -> Value {
    let mut map = Map::new();
    map.insert("schema".into(), json!(SCHEMA));
    map.insert("command".into(), json!(command));
    map.insert("config".into(), config);
    if let Value::Object(f) = fields {
        map.extend(f);
    }
    Value::Object(map)
}

fn cell_options(common: &Common) -> CellOptions {
    CellOptions {
        convention: common.convention.into(),
        tol: common.tol,
        max_iter: None,
    }
}

fn cmd_validate(file: &Path) -> Result<Report, Failure> {
    let graph = load(file)?;
    let report = validate(&graph);
    let passed = report.passed();
    let rows = report
        .checks
        .iter()
        .map(|c| vec![json!(c.name), json!(c.passed), json!(c.detail)])
        .collect();
    Ok(Report {
        body: with_header(
            "validate",
            json!({ "input": file }),
            json!({
                "passed": passed,
                "d": graph.d(),
                "k": graph.k(),
                "nodes": graph.node_count(),
                "orbits": graph.orbits().len(),
                "report": to_json(&report),
            }),
        ),
        csv_header: vec!["check", "passed", "detail"],
        csv_rows: rows,
        passed,
    })
}

fn cmd_cell(file: &Path, common: &Common) -> Result<Report, Failure> {
    let graph = load(file)?;
    let opts = cell_options(common);
    let conv = opts.convention;
    let other = match conv {
        Convention::Double => Convention::Single,
        Convention::Single => Convention::Double,
    };
    let tensor = homogenized_tensor(&graph, opts).map_err(|e| Failure::input("cell", e))?;
    let d = graph.d();
    let axes: Vec<f64> = (0..d).map(|m| tensor.entries[m][m]).collect();
    let ratio = other.factor() / conv.factor();
    let other_axes: Vec<f64> = axes.iter().map(|v| v * ratio).collect();
    // A single axis is reported as a number.
    let per_axis = |v: &[f64]| if d == 1 { json!(v[0]) } else { json!(v) };
    let nodes: Vec<String> = graph.nodes().iter().map(|n| n.to_string()).collect();
    let mut iterations = Vec::new();
    for m in 0..d {
        let mut z = vec![0.0; d];
        z[m] = 1.0;
        let s = solve_corrector(&graph, &z, opts).map_err(|e| Failure::input("cell", e))?;
        iterations.push(s.iterations);
    }
    let mut rows = Vec::new();
    for (m, row) in tensor.entries.iter().enumerate() {
        for (n, v) in row.iter().enumerate() {
            rows.push(vec![json!(format!("A[{m}][{n}]")), json!(v)]);
        }
    }
    for (m, chi) in tensor.correctors.iter().enumerate() {
        for (node, v) in nodes.iter().zip(chi) {
            rows.push(vec![json!(format!("chi[e{}]{node}", m + 1)), json!(v)]);
        }
    }
    Ok(Report {
        body: with_header(
            "cell",
            json!({ "input": file, "convention": conv, "tolerance": common.tol }),
            json!({
                "convention": conv,
                "f_hom": per_axis(&axes),
                "f_hom_other": { "convention": other, "f_hom": per_axis(&other_axes) },
                "tensor": {
                    "entries": tensor.entries,
                    "convention": conv,
                    "tolerance": tensor.tolerance,
                    "min_eigenvalue": tensor.min_eigenvalue,
                },
                "nodes": nodes,
                "correctors": tensor.correctors,
                "iterations": iterations,
            }),
        ),
        csv_header: vec!["quantity", "value"],
        csv_rows: rows,
        passed: true,
    })
}

/// Lower-bound tolerance for `f_0^K >= f_hom`.
const LOWER_BOUND_TOL: f64 = 1e-8;
const TILING_SLACK: f64 = 1e-6;

fn cmd_asymptotic(file: &Path, ks: &[usize], z: &[f64], common: &Common) -> Result<Report, Failure> {
    let graph = load(file)?;
    if ks.is_empty() {
        return Err(Failure::usage("--k needs at least one window size"));
    }
    let z = if z.is_empty() {
        let mut e = vec![0.0; graph.d()];
        e[0] = 1.0;
        e
    } else {
        z.to_vec()
    };
    if z.len() != graph.d() {
        return Err(Failure::usage(format!(
            "--z has {} components, graph has d = {}",
            z.len(),
            graph.d()
        )));
    }
    let opts = cell_options(common);
    let table = convergence_study(&graph, &z, ks, opts).map_err(|e| Failure::input("asymptotic", e))?;
    let mut sorted = ks.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let tiling = sorted
        .windows(2)
        .map(|w| tiling_bound(&graph, &z, w[0], w[1], TILING_SLACK, opts))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::input("asymptotic", e))?;
    let lower_ok = table
        .rows
        .iter()
        .all(|r| r.value >= table.f_hom - LOWER_BOUND_TOL);
    let passed = lower_ok && tiling.iter().all(|t| t.passed);
    let rows = table
        .rows
        .iter()
        .map(|r| vec![json!(r.k), json!(r.value), json!(r.gap), json!(r.seconds)])
        .collect();
    Ok(Report {
        body: with_header(
            "asymptotic",
            json!({ "input": file, "k": ks, "z": z, "convention": opts.convention, "tolerance": common.tol }),
            json!({
                "passed": passed,
                "lower_bound_holds": lower_ok,
                "study": to_json(&table),
                "tiling": to_json(&tiling),
            }),
        ),
        csv_header: vec!["k", "value", "gap", "seconds"],
        csv_rows: rows,
        passed,
    })
}

fn cmd_inequalities(
    file: &Path,
    trials: usize,
    seed: u64,
    cells: &[usize],
    factor: f64,
) -> Result<Report, Failure> {
    let graph = load(file)?;
    let fail = |e: lattice_homog::coarse::CoarseError| Failure::input("inequalities", e);
    let consts = compute_path_constants(&graph).map_err(fail)?;
    let two = check_two_connectedness(&graph, &consts, trials, seed).map_err(fail)?;
    let pw = check_poincare_wirtinger(&graph, &consts, trials, seed).map_err(fail)?;
    let poincare = check_poincare(&graph, cells, trials, seed, factor).map_err(fail)?;
    let passed = two.passed && pw.passed && poincare.passed;
    let mut rows: Vec<Vec<Value>> = [&two, &pw]
        .iter()
        .map(|r| {
            vec![
                json!(r.name),
                json!(r.constant),
                json!(r.trials),
                json!(r.worst_ratio),
                json!(r.passed),
            ]
        })
        .collect();
    for r in &poincare.rows {
        rows.push(vec![
            json!(format!("poincare_{}", r.cells)),
            json!(r.constant),
            json!(trials),
            json!(r.worst_trial_ratio),
            json!(r.worst_trial_ratio <= 1.0 + 1e-9),
        ]);
    }
    Ok(Report {
        body: with_header(
            "inequalities",
            json!({ "input": file, "trials": trials, "seed": seed, "poincare_cells": cells, "poincare_factor": factor }),
            json!({
                "passed": passed,
                "constants": to_json(&consts),
                "two_connectedness": to_json(&two),
                "poincare_wirtinger": to_json(&pw),
                "poincare": to_json(&poincare),
            }),
        ),
        csv_header: vec!["inequality", "constant", "trials", "worst_ratio", "passed"],
        csv_rows: rows,
        passed,
    })
}

fn parse_omega(values: &[f64], d: usize) -> Result<BoxDomain, Failure> {
    let (lo, hi) = match values.len() {
        2 => (vec![values[0]; d], vec![values[1]; d]),
        n if n == 2 * d => (
            values.iter().step_by(2).copied().collect(),
            values.iter().skip(1).step_by(2).copied().collect(),
        ),
        _ => {
            return Err(Failure::usage(format!(
                "--omega needs 2 or {} numbers, got {}",
                2 * d,
                values.len()
            )))
        }
    };
    BoxDomain::new(lo, hi).map_err(|e| Failure::usage(e.to_string()))
}

fn cmd_bvp(
    file: &Path,
    omega: &[f64],
    phi: &str,
    eps: &[String],
    r: Option<i64>,
    common: &Common,
) -> Result<Report, Failure> {
    let graph = load(file)?;
    let d = graph.d();
    let omega = parse_omega(omega, d)?;
    let datum = Datum::parse(phi, d).map_err(|e| Failure::usage(e.to_string()))?;
    if eps.is_empty() {
        return Err(Failure::usage("--eps needs at least one value"));
    }
    let eps_list = eps
        .iter()
        .map(|s| Epsilon::parse(s, graph.period()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::usage(e.to_string()))?;
    if matches!(r, Some(r) if r < 1) {
        return Err(Failure::usage("--r must be a positive integer"));
    }
    let opts = StudyOptions {
        r,
        convention: common.convention.into(),
        tol: common.tol.min(1e-10),
    };
    let study = epsilon_convergence_study(&graph, &omega, &datum, &eps_list, opts)
        .map_err(|e| Failure::input("bvp", e))?;
    let rows = study
        .rows
        .iter()
        .map(|r| {
            vec![
                json!(r.eps),
                json!(r.discrete_energy),
                json!(r.continuum_energy),
                json!(r.l2_error),
                json!(r.seconds),
            ]
        })
        .collect();
    Ok(Report {
        body: with_header(
            "bvp",
            json!({
                "input": file,
                "omega": to_json(&omega),
                "phi": phi,
                "eps": eps,
                "r": study.r,
                "convention": opts.convention,
                "tolerance": opts.tol,
            }),
            json!({ "study": to_json(&study) }),
        ),
        csv_header: vec!["eps", "discrete_energy", "continuum_energy", "l2_error", "seconds"],
        csv_rows: rows,
        passed: true,
    })
}

fn cmd_examples(action: &ExamplesAction, out: &mut dyn Write) -> Result<Option<Report>, Failure> {
    match action {
        ExamplesAction::List => {
            let list: Vec<Value> = fixtures::FIXTURES
                .iter()
                .map(|f| json!({ "name": f.name, "description": f.description }))
                .collect();
            let rows = fixtures::FIXTURES
                .iter()
                .map(|f| vec![json!(f.name), json!(f.description)])
                .collect();
            Ok(Some(Report {
                body: with_header("examples", json!({ "action": "list" }), json!({ "examples": list })),
                csv_header: vec!["name", "description"],
                csv_rows: rows,
                passed: true,
            }))
        }
        ExamplesAction::Export { name, dir, all } => {
            let chosen: Vec<&fixtures::Fixture> = match (name, all) {
                (_, true) => fixtures::FIXTURES.iter().collect(),
                (Some(n), false) => vec![fixtures::fixture(n)
                    .ok_or_else(|| Failure::usage(format!("no bundled example named `{n}`")))?],
                (None, false) => return Err(Failure::usage("give an example name or --all")),
            };
            match dir {
                None if chosen.len() == 1 => {
                    out.write_all(chosen[0].source.as_bytes())
                        .map_err(|e| Failure::usage(e.to_string()))?;
                    Ok(None)
                }
                None => Err(Failure::usage("--all needs --dir")),
                Some(dir) => {
                    let io = |e: std::io::Error| Failure {
                        code: 2,
                        kind: "io",
                        message: format!("cannot write to {}: {e}", dir.display()),
                        detail: Value::Null,
                    };
                    std::fs::create_dir_all(dir).map_err(io)?;
                    let mut written = Vec::new();
                    for f in &chosen {
                        let path = dir.join(format!("{}.lgf", f.name));
                        std::fs::write(&path, f.source).map_err(io)?;
                        written.push(path);
                    }
                    let rows = written.iter().map(|p| vec![json!(p)]).collect();
                    Ok(Some(Report {
                        body: with_header(
                            "examples",
                            json!({ "action": "export", "dir": dir }),
                            json!({ "written": written }),
                        ),
                        csv_header: vec!["path"],
                        csv_rows: rows,
                        passed: true,
                    }))
                }
            }
        }
    }
}

fn csv_field(v: &Value) -> String {
    let s = match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    };
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}

fn human(v: &Value, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                match v {
                    Value::Object(_) => {
                        out.push_str(&format!("{pad}{k}:\n"));
                        human(v, indent + 1, out);
                    }
                    Value::Array(items) if items.iter().any(|i| i.is_object()) => {
                        out.push_str(&format!("{pad}{k}:\n"));
                        human(v, indent + 1, out);
                    }
                    _ => out.push_str(&format!("{pad}{k}: {}\n", inline(v))),
                }
            }
        }
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                out.push_str(&format!("{pad}[{i}]\n"));
                human(item, indent + 1, out);
            }
        }
        other => out.push_str(&format!("{pad}{}\n", inline(other))),
    }
}

fn inline(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => format!("[{}]", items.iter().map(inline).collect::<Vec<_>>().join(", ")),
        other => other.to_string(),
    }
}

/// Serializes a report. The output depends on nothing but `report`.
pub fn emit(report: &Report, format: Format) -> Vec<u8> {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&report.body).expect("json");
            s.push('\n');
            s.into_bytes()
        }
        Format::Csv => {
            let mut s = report.csv_header.join(",");
            s.push('\n');
            for row in &report.csv_rows {
                s.push_str(&row.iter().map(csv_field).collect::<Vec<_>>().join(","));
                s.push('\n');
            }
            s.into_bytes()
        }
        Format::Human => {
            let mut s = String::new();
            human(&report.body, 0, &mut s);
            s.into_bytes()
        }
    }
}

fn emit_failure(f: &Failure, format: Format, out: &mut dyn Write, err: &mut dyn Write) {
    let _ = writeln!(err, "error: {}", f.message);
    if format == Format::Json {
        let mut e = json!({ "kind": f.kind, "message": f.message, "exit_code": f.code });
        if !f.detail.is_null() {
            e["detail"] = f.detail.clone();
        }
        let body = json!({ "schema": SCHEMA, "error": e });
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&body).expect("json"));
    }
}

/// Sizes the global worker pool from [`THREADS_ENV`] when set.
pub fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

/// Runs one command and returns the process exit code: 0 on success, 1 when
/// the input is rejected or a check fails, 2 on usage errors.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    2
                }
            };
        }
    };
    let result = match &cli.command {
        Command::Validate { file } => cmd_validate(file).map(Some),
        Command::Cell { file, common } => cmd_cell(file, common).map(Some),
        Command::Asymptotic { file, k, z, common } => cmd_asymptotic(file, k, z, common).map(Some),
        Command::Inequalities {
            file,
            trials,
            seed,
            poincare_cells,
            poincare_factor,
        } => cmd_inequalities(file, *trials, *seed, poincare_cells, *poincare_factor).map(Some),
        Command::Bvp {
            file,
            omega,
            phi,
            eps,
            r,
            common,
        } => cmd_bvp(file, omega, phi, eps, *r, common).map(Some),
        Command::Examples { action } => cmd_examples(action, out),
    };
    match result {
        Ok(Some(report)) => {
            let _ = out.write_all(&emit(&report, cli.format));
            if report.passed {
                0
            } else {
                1
            }
        }
        Ok(None) => 0,
        Err(f) => {
            emit_failure(&f, cli.format, out, err);
            f.code
        }
    }
}
