//! Command-line front end.
//!
//! Exit codes: 0 ok, 1 usage/I-O/parse, 2 infeasible, 3 not converged,
//! 4 a `verify` check failed.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::bridge::{
    iterated_bridge_check, most_probable_paths, restriction_ratio_check, BridgeError, BridgeSolution, Marginal,
    SolverConfig, DEFAULT_TIE_TOL,
};
use crate::calibrate::{calibrate_temperature, temperature_sweep, CalibrationError, Problem};
use crate::graph::{load_graph, DirectedGraph, GraphError, NodeId, Path, DEFAULT_PATH_CAP};
use crate::metrics::{
    average_path_length, chain_free_energy, entropy, graph_efficiency_stats, MetricsError, PathMeasure,
};
use crate::oracle::{oracle_bridge, verify_theorem7, OracleError, ORACLE_TOL};
use crate::prior::{check_temperature, PriorError, Temperature};

#[derive(Debug, Parser)]
#[command(name = "netbridge", version, about = "Maximum-entropy transport on directed graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one bridge over the Boltzmann prior.
    Solve(SolveArgs),
    /// Solve over a grid of temperatures.
    Sweep(SweepArgs),
    /// Find the temperature meeting a length budget.
    Calibrate(CalibrateArgs),
    /// Dump the feasible paths of a given number of steps.
    Paths(PathsArgs),
    /// Shortest-path statistics of the graph.
    Metrics(MetricsArgs),
    /// Brute-force solve by endpoint scaling over enumerated paths.
    Oracle(SolveArgs),
    /// Run the structural checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output file, `-` for standard output.
    #[arg(long, short = 'o', default_value = "-")]
    pub output: String,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Report entropies in bits instead of nats.
    #[arg(long)]
    pub bits: bool,
}

#[derive(Debug, Args)]
pub struct MarginalArgs {
    /// Initial marginal: a JSON vector, `{"delta": k}`, or a file holding either.
    #[arg(long, required_unless_present = "from_delta", conflicts_with = "from_delta")]
    pub from: Option<String>,
    #[arg(long)]
    pub from_delta: Option<usize>,
    /// Final marginal, same forms as `--from`.
    #[arg(long, required_unless_present = "to_delta", conflicts_with = "to_delta")]
    pub to: Option<String>,
    #[arg(long)]
    pub to_delta: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    pub marginals: MarginalArgs,
    #[arg(short = 'N', long = "steps")]
    pub steps: usize,
    #[arg(short = 'T', long = "temperature")]
    pub temperature: f64,
    /// Per-path masses are listed when there are at most this many paths.
    #[arg(long, default_value_t = 1000)]
    pub path_cap: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    pub marginals: MarginalArgs,
    #[arg(short = 'N', long = "steps")]
    pub steps: usize,
    /// Comma-separated temperatures.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    pub marginals: MarginalArgs,
    #[arg(short = 'N', long = "steps")]
    pub steps: usize,
    #[arg(long = "l-bar", allow_hyphen_values = true)]
    pub l_bar: f64,
    /// Accepted distance between the achieved and requested length.
    #[arg(long, default_value_t = 1e-10)]
    pub length_tol: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PathsArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(short = 'N', long = "steps")]
    pub steps: usize,
    #[arg(long)]
    pub from_delta: Option<usize>,
    #[arg(long)]
    pub to_delta: Option<usize>,
    /// Adds Boltzmann weights `exp(-l/T)`, normalized over the listed paths.
    #[arg(short = 'T', long = "temperature")]
    pub temperature: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_PATH_CAP)]
    pub cap: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Defaults to the built-in nine-node example.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub from_delta: usize,
    /// Defaults to the last node.
    #[arg(long)]
    pub to_delta: Option<usize>,
    #[arg(short = 'N', long = "steps", default_value_t = 4)]
    pub steps: usize,
    #[arg(short = 'T', long = "temperature", default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value = "0.1,0.5,1,2,10")]
    pub grid: String,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub out: OutputArgs,
    /// Test hook: overwrite one policy entry, `t,i,j,value` (t from 0, nodes from 1).
    #[arg(long, hide = true)]
    pub corrupt_transition: Option<String>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("verification failed: {0}")]
    Verification(String),
}

fn prior_code(e: &PriorError) -> i32 {
    match e {
        PriorError::NoFeasiblePaths { .. } => 2,
        PriorError::NotConverged { .. } => 3,
        _ => 1,
    }
}

fn bridge_code(e: &BridgeError) -> i32 {
    match e {
        BridgeError::Infeasible { .. } | BridgeError::NoPositivePath { .. } => 2,
        BridgeError::NotConverged { .. } => 3,
        BridgeError::Prior(p) => prior_code(p),
        _ => 1,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Prior(e) => prior_code(e),
            CliError::Bridge(e) => bridge_code(e),
            CliError::Calibration(e) => match e {
                CalibrationError::BudgetOutOfRange { .. }
                | CalibrationError::ConstantLength(_)
                | CalibrationError::NoFeasiblePath => 2,
                CalibrationError::NotConverged { .. } => 3,
                CalibrationError::Bridge(b) => bridge_code(b),
                CalibrationError::Prior(p) => prior_code(p),
                _ => 1,
            },
            CliError::Oracle(e) => match e {
                OracleError::Infeasible { .. } | OracleError::NoFeasiblePath { .. } => 2,
                OracleError::NotConverged { .. } => 3,
                OracleError::Bridge(b) => bridge_code(b),
                OracleError::Prior(p) => prior_code(p),
                _ => 1,
            },
            CliError::Verification(_) => 4,
            _ => 1,
        }
    }
}

/// Rounds to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if x.is_finite() && x != 0.0 {
        format!("{x:.11e}").parse().expect("formatted float parses")
    } else {
        x
    }
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(round12(x))
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn csv_num(x: f64) -> String {
    match num(x) {
        Value::Number(n) => n.to_string(),
        Value::String(s) => s,
        _ => unreachable!(),
    }
}

fn matrix(rows: impl IntoIterator<Item = Vec<f64>>) -> Value {
    Value::Array(rows.into_iter().map(|r| Value::Array(r.into_iter().map(num).collect())).collect())
}

fn array2(a: &ndarray::Array2<f64>) -> Value {
    matrix(a.outer_iter().map(|r| r.to_vec()))
}

fn entropy_unit(bits: bool) -> (&'static str, f64) {
    if bits {
        ("bits", std::f64::consts::LN_2)
    } else {
        ("nats", 1.0)
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MarginalSpec {
    Delta { delta: usize },
    Named { weights: Vec<f64> },
    Weights(Vec<f64>),
}

/// Parses a marginal from inline JSON or a JSON file.
pub fn parse_marginal(spec: &str, n: usize) -> Result<Marginal, CliError> {
    let trimmed = spec.trim_start();
    let text = if trimmed.starts_with('{') || trimmed.starts_with('[') {
        spec.to_string()
    } else {
        read_file(&PathBuf::from(spec))?
    };
    let parsed: MarginalSpec =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad marginal {spec:?}: {e}")))?;
    let m = match parsed {
        MarginalSpec::Delta { delta } => Marginal::delta(n, NodeId(delta))?,
        MarginalSpec::Named { weights } | MarginalSpec::Weights(weights) => {
            if weights.len() != n {
                return Err(CliError::Usage(format!(
                    "marginal has {} entries, graph has {n} nodes",
                    weights.len()
                )));
            }
            let s: f64 = weights.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(CliError::Usage(format!("marginal weights sum to {s}, not 1")));
            }
            Marginal::normalized(weights)?
        }
    };
    Ok(m)
}

fn marginals(args: &MarginalArgs, n: usize) -> Result<(Marginal, Marginal), CliError> {
    let one = |spec: &Option<String>, delta: Option<usize>| match (spec, delta) {
        (_, Some(k)) => Ok(Marginal::delta(n, NodeId(k))?),
        (Some(s), None) => parse_marginal(s, n),
        (None, None) => Err(CliError::Usage("missing marginal".into())),
    };
    Ok((one(&args.from, args.from_delta)?, one(&args.to, args.to_delta)?))
}

fn read_file(path: &std::path::Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_graph(path: &std::path::Path) -> Result<DirectedGraph, CliError> {
    Ok(load_graph(&read_file(path)?)?)
}

/// Parses a comma-separated list of temperatures.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let grid = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad temperature {s:?} in grid")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if grid.is_empty() {
        return Err(CliError::Usage("temperature grid is empty".into()));
    }
    Ok(grid)
}

fn emit(out: &OutputArgs, doc: &Value, csv: impl FnOnce() -> String) -> Result<(), CliError> {
    let text = match out.format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(doc).expect("json values serialize");
            s.push('\n');
            s
        }
        Format::Csv => csv(),
    };
    let io_err = |source| CliError::Io {
        path: out.output.clone(),
        source,
    };
    if out.output == "-" {
        let mut stdout = io::stdout().lock();
        stdout.write_all(text.as_bytes()).map_err(io_err)?;
        stdout.flush().map_err(io_err)
    } else {
        fs::write(&out.output, text).map_err(io_err)
    }
}

/// A `solve` document read back from disk.
#[derive(Debug, Clone, Deserialize)]
pub struct FlowDocument {
    pub horizon: usize,
    pub temperature: f64,
    pub marginal_flow: Vec<Vec<f64>>,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub length: f64,
    pub entropy: f64,
    pub free_energy: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl FlowDocument {
    /// Recomputes `(L, S)` in nats from the recorded flow and policy.
    pub fn recompute(&self, g: &DirectedGraph) -> (f64, f64) {
        let mut length = 0.0;
        let mut s: f64 = self.marginal_flow[0].iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
        for (t, pi) in self.transitions.iter().enumerate() {
            for (i, row) in pi.iter().enumerate() {
                let w = self.marginal_flow[t][i];
                if w <= 0.0 {
                    continue;
                }
                for (j, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        length += w * p * g.length(i, j);
                        s -= w * p * p.ln();
                    }
                }
            }
        }
        (length, s)
    }
}

fn path_rows(g: &DirectedGraph, masses: impl IntoIterator<Item = (Path, f64)>) -> Value {
    Value::Array(
        masses
            .into_iter()
            .map(|(p, m)| json!({"path": p.to_string(), "length": num(g.path_length(&p)), "mass": num(m)}))
            .collect(),
    )
}

fn flow_csv(flow: &ndarray::Array2<f64>) -> String {
    let n = flow.ncols();
    let mut s = String::from("t");
    for j in 1..=n {
        s.push_str(&format!(",{j}"));
    }
    s.push('\n');
    for (t, row) in flow.outer_iter().enumerate() {
        s.push_str(&t.to_string());
        for &x in row {
            s.push(',');
            s.push_str(&csv_num(x));
        }
        s.push('\n');
    }
    s
}

fn cmd_solve(args: &SolveArgs) -> Result<(), CliError> {
    let g = read_graph(&args.graph)?;
    check_temperature(args.temperature)?;
    let (nu0, nu_n) = marginals(&args.marginals, g.node_count())?;
    let problem = Problem::new(&g, &nu0, &nu_n, args.steps);
    let sol = problem.solve(args.temperature, &args.solver.config())?;
    let report = chain_free_energy(&sol, args.temperature, &g);
    let paths = match problem.admissible_paths(args.path_cap)? {
        Some(paths) => {
            let masses = paths
                .into_iter()
                .map(|p| sol.path_probability(&p).map(|m| (p, m)))
                .collect::<Result<Vec<_>, _>>()?;
            path_rows(&g, masses)
        }
        None => Value::Null,
    };
    let (unit, scale) = entropy_unit(args.out.bits);
    let doc = json!({
        "command": "solve",
        "nodes": g.node_count(),
        "horizon": args.steps,
        "temperature": num(args.temperature),
        "marginal_flow": array2(&sol.marginal_flow()),
        "transitions": Value::Array(sol.transitions().iter().map(array2).collect()),
        "paths": paths,
        "length": num(report.length),
        "entropy": num(report.entropy / scale),
        "entropy_unit": unit,
        "free_energy": num(report.free_energy),
        "iterations": sol.sweeps(),
        "residual": num(sol.residual()),
    });
    emit(&args.out, &doc, || flow_csv(&sol.marginal_flow()))
}

fn cmd_oracle(args: &SolveArgs) -> Result<(), CliError> {
    let g = read_graph(&args.graph)?;
    check_temperature(args.temperature)?;
    let (nu0, nu_n) = marginals(&args.marginals, g.node_count())?;
    let problem = Problem::new(&g, &nu0, &nu_n, args.steps);
    let prior = problem.prior(args.temperature)?;
    let measure = oracle_bridge(&prior, &nu0, &nu_n, ORACLE_TOL)?;
    let n = g.node_count();
    let mut flow = ndarray::Array2::<f64>::zeros((args.steps + 1, n));
    for (p, m) in measure.iter() {
        for (t, &i) in p.indices().iter().enumerate() {
            flow[[t, i]] += m;
        }
    }
    let length = average_path_length(&measure, &g);
    let s = entropy(&measure);
    let (unit, scale) = entropy_unit(args.out.bits);
    let doc = json!({
        "command": "oracle",
        "nodes": n,
        "horizon": args.steps,
        "temperature": num(args.temperature),
        "marginal_flow": array2(&flow),
        "paths": path_rows(&g, measure.iter().map(|(p, m)| (p.clone(), m))),
        "length": num(length),
        "entropy": num(s / scale),
        "entropy_unit": unit,
        "free_energy": num(length - args.temperature * s),
    });
    emit(&args.out, &doc, || flow_csv(&flow))
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let g = read_graph(&args.graph)?;
    let grid = parse_grid(&args.grid)?;
    let (nu0, nu_n) = marginals(&args.marginals, g.node_count())?;
    let problem = Problem::new(&g, &nu0, &nu_n, args.steps);
    let sweep = temperature_sweep(&problem, &grid, &args.solver.config())?;
    let (unit, scale) = entropy_unit(args.out.bits);
    let rows: Vec<Value> = sweep
        .rows
        .iter()
        .map(|row| match &row.result {
            Ok(p) => json!({
                "temperature": num(row.temperature),
                "length": num(p.length),
                "entropy": num(p.entropy / scale),
                "variance": num(p.variance),
                "path_masses": Value::Array(p.path_masses.iter().copied().map(num).collect()),
            }),
            Err(e) => json!({"temperature": num(row.temperature), "error": e.to_string()}),
        })
        .collect();
    let doc = json!({
        "command": "sweep",
        "horizon": args.steps,
        "entropy_unit": unit,
        "tracked_paths": sweep.tracked.iter().map(|p| p.to_string()).collect::<Vec<_>>(),
        "rows": rows,
    });
    emit(&args.out, &doc, || {
        let mut s = String::from("T,L,S,Var");
        for p in &sweep.tracked {
            s.push_str(&format!(",{p}"));
        }
        s.push('\n');
        for row in &sweep.rows {
            s.push_str(&csv_num(row.temperature));
            match &row.result {
                Ok(p) => {
                    for x in [p.length, p.entropy / scale, p.variance].into_iter().chain(p.path_masses.iter().copied()) {
                        s.push(',');
                        s.push_str(&csv_num(x));
                    }
                }
                Err(_) => s.push_str(&",".repeat(3 + sweep.tracked.len())),
            }
            s.push('\n');
        }
        s
    })?;
    let mut worst: Option<CliError> = None;
    for row in sweep.rows {
        if let Err(e) = row.result {
            eprintln!("error: T={}: {e}", row.temperature);
            let e = CliError::from(e);
            if worst.as_ref().is_none_or(|w| e.exit_code() > w.exit_code()) {
                worst = Some(e);
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<(), CliError> {
    let g = read_graph(&args.graph)?;
    let (nu0, nu_n) = marginals(&args.marginals, g.node_count())?;
    let problem = Problem::new(&g, &nu0, &nu_n, args.steps);
    let c = calibrate_temperature(&problem, args.l_bar, args.length_tol, &args.solver.config())?;
    let (temperature, boundary) = match c.temperature {
        Temperature::Zero => (json!(0.0), json!("zero")),
        Temperature::Infinite => (json!("inf"), json!("infinite")),
        Temperature::Finite(t) => (num(t), Value::Null),
    };
    let (unit, scale) = entropy_unit(args.out.bits);
    let doc = json!({
        "command": "calibrate",
        "l_bar": num(args.l_bar),
        "temperature": temperature,
        "boundary": boundary,
        "achieved_length": num(c.achieved_length),
        "entropy": num(c.entropy / scale),
        "entropy_unit": unit,
        "lower_bound": num(c.bounds.lower),
        "upper_bound": num(c.bounds.upper),
        "evaluations": c.evaluations,
    });
    emit(&args.out, &doc, || {
        let plain = |v: &Value| match v {
            Value::String(s) => s.clone(),
            Value::Null => String::new(),
            other => other.to_string(),
        };
        format!(
            "l_bar,T,boundary,L,S,lower,upper\n{},{},{},{},{},{},{}\n",
            csv_num(args.l_bar),
            plain(&temperature),
            plain(&boundary),
            csv_num(c.achieved_length),
            csv_num(c.entropy / scale),
            csv_num(c.bounds.lower),
            csv_num(c.bounds.upper)
        )
    })
}

fn cmd_paths(args: &PathsArgs) -> Result<(), CliError> {
    let g = read_graph(&args.graph)?;
    let paths = g.enumerate_paths_capped(args.steps, args.from_delta.map(NodeId), args.to_delta.map(NodeId), args.cap)?;
    let lengths: Vec<f64> = paths.iter().map(|p| g.path_length(p)).collect();
    let weights = match args.temperature {
        Some(t) => {
            check_temperature(t)?;
            let lm = lengths.iter().copied().fold(f64::INFINITY, f64::min);
            let w: Vec<f64> = lengths.iter().map(|l| (-(l - lm) / t).exp()).collect();
            let z: f64 = w.iter().sum();
            Some(w.into_iter().map(|x| x / z).collect::<Vec<_>>())
        }
        None => None,
    };
    let rows: Vec<Value> = paths
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mut v = json!({"path": p.to_string(), "length": num(lengths[k])});
            if let Some(w) = &weights {
                v["weight"] = num(w[k]);
            }
            v
        })
        .collect();
    let doc = json!({
        "command": "paths",
        "horizon": args.steps,
        "count": paths.len(),
        "paths": rows,
    });
    emit(&args.out, &doc, || {
        let mut s = String::from(if weights.is_some() { "path,length,weight\n" } else { "path,length\n" });
        for (k, p) in paths.iter().enumerate() {
            s.push_str(&format!("{p},{}", csv_num(lengths[k])));
            if let Some(w) = &weights {
                s.push_str(&format!(",{}", csv_num(w[k])));
            }
            s.push('\n');
        }
        s
    })
}

fn cmd_metrics(args: &MetricsArgs) -> Result<(), CliError> {
    let g = read_graph(&args.graph)?;
    let e = graph_efficiency_stats(&g)?;
    let doc = json!({
        "command": "metrics",
        "nodes": g.node_count(),
        "edges": g.edge_count(),
        "characteristic_length": num(e.characteristic_length),
        "reachable_pair_average": num(e.reachable_pair_average),
        "reachable_pairs": e.reachable_pairs,
        "efficiency": num(e.efficiency),
        "global_efficiency": num(e.global_efficiency),
    });
    emit(&args.out, &doc, || {
        format!(
            "nodes,edges,characteristic_length,reachable_pair_average,reachable_pairs,efficiency,global_efficiency\n{},{},{},{},{},{},{}\n",
            g.node_count(),
            g.edge_count(),
            csv_num(e.characteristic_length),
            csv_num(e.reachable_pair_average),
            e.reachable_pairs,
            csv_num(e.efficiency),
            csv_num(e.global_efficiency)
        )
    })
}

/// Outcome of one `verify` check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn measured(name: &'static str, value: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name,
            passed: value <= tolerance,
            value,
            tolerance,
            detail,
        }
    }

    fn from_result(name: &'static str, tolerance: f64, r: Result<(f64, String), CliError>) -> Self {
        match r {
            Ok((value, detail)) => Self::measured(name, value, tolerance, detail),
            Err(e) => Self {
                name,
                passed: false,
                value: f64::NAN,
                tolerance,
                detail: e.to_string(),
            },
        }
    }
}

fn parse_corruption(text: &str) -> Result<(usize, usize, usize, f64), CliError> {
    let bad = || CliError::Usage(format!("bad corruption spec {text:?}; expected t,i,j,value"));
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(bad());
    }
    let t = parts[0].parse().map_err(|_| bad())?;
    let i: usize = parts[1].parse().map_err(|_| bad())?;
    let j: usize = parts[2].parse().map_err(|_| bad())?;
    let v = parts[3].parse().map_err(|_| bad())?;
    if i == 0 || j == 0 {
        return Err(bad());
    }
    Ok((t, i - 1, j - 1, v))
}

/// Runs the structural checks for one endpoint pair.
#[allow(clippy::too_many_arguments)]
pub fn verify_checks(
    g: &DirectedGraph,
    x0: NodeId,
    x_n: NodeId,
    horizon: usize,
    temperature: f64,
    grid: &[f64],
    cfg: &SolverConfig,
    corrupt: Option<(usize, usize, usize, f64)>,
) -> Result<Vec<Check>, CliError> {
    const NAMES: [&str; 6] = [
        "marginal_consistency",
        "oracle_equivalence",
        "iterated_bridge",
        "most_probable_paths",
        "restriction_ratio",
        "theorem7",
    ];
    let n = g.node_count();
    check_temperature(temperature)?;
    g.check_node(x0)?;
    g.check_node(x_n)?;
    for &t in grid {
        check_temperature(t)?;
    }
    if horizon == 0 {
        return Ok(NAMES
            .iter()
            .map(|&name| Check {
                name,
                passed: true,
                value: 0.0,
                tolerance: 0.0,
                detail: "trivial: no steps".into(),
            })
            .collect());
    }
    let nu0 = Marginal::delta(n, x0)?;
    let nu_n = Marginal::delta(n, x_n)?;
    let problem = Problem::new(g, &nu0, &nu_n, horizon);
    let prior = problem.prior(temperature)?;
    let mut sol: BridgeSolution = crate::bridge::solve_schrodinger(&prior, &nu0, &nu_n, cfg)?;
    if let Some((t, i, j, v)) = corrupt {
        if t >= horizon || i >= n || j >= n {
            return Err(CliError::Usage("corruption index out of range".into()));
        }
        sol = sol.with_corrupted_transition(t, i, j, v);
    }
    let mut checks = Vec::new();

    checks.push(Check::from_result("marginal_consistency", 1e-9, {
        let flow = sol.marginal_flow();
        let mut worst: f64 = 0.0;
        for (t, pi) in sol.transitions().iter().enumerate() {
            for (i, row) in pi.outer_iter().enumerate() {
                if flow[[t, i]] > 0.0 {
                    worst = worst.max((row.sum() - 1.0).abs());
                }
            }
        }
        for j in 0..n {
            worst = worst.max((flow[[horizon, j]] - nu_n.weights()[j]).abs());
        }
        Ok((worst, "policy rows stochastic and final marginal met".into()))
    }));

    checks.push(Check::from_result("oracle_equivalence", 1e-10, (|| {
        let oracle = oracle_bridge(&prior, &nu0, &nu_n, ORACLE_TOL)?;
        let paths: Vec<Path> = oracle.paths().cloned().collect();
        let solved = PathMeasure::from_mass(&paths, &sol)?;
        let mut tv = oracle.total_variation(&solved);
        // mass the solver puts outside the oracle support
        tv += 0.5 * (1.0 - solved.total()).abs();
        Ok((tv, format!("{} paths", paths.len())))
    })()));

    checks.push(Check::from_result("iterated_bridge", 1e-9, (|| {
        let reach: Vec<NodeId> = g
            .enumerate_paths(horizon, Some(x0), None)?
            .iter()
            .filter_map(|p| p.last())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .map(NodeId::from_index)
            .collect();
        if reach.is_empty() {
            return Err(BridgeError::NoPositivePath { from: x0.0, to: x_n.0 }.into());
        }
        let first_end = Marginal::uniform_on(n, &reach)?;
        let mut w = vec![0.0; n];
        for (k, node) in reach.iter().enumerate() {
            w[node.index()] = (k + 1) as f64;
        }
        let second_end = Marginal::normalized(w)?;
        let full = Problem::new(g, &nu0, &first_end, horizon).prior(temperature)?;
        let d = iterated_bridge_check(&full, (&nu0, &first_end), (&nu0, &second_end), cfg)?
            .max(iterated_bridge_check(&full, (&nu0, &first_end), (&nu0, &nu_n), cfg)?);
        Ok((d, format!("{} reachable end nodes", reach.len())))
    })()));

    checks.push(Check::from_result("most_probable_paths", 0.0, (|| {
        let mut reference: Option<Vec<Path>> = None;
        let mut mismatches = 0usize;
        for &t in grid {
            let p = Problem::new(g, &nu0, &nu_n, horizon);
            let prior_t = p.prior(t)?;
            let sol_t = crate::bridge::solve_schrodinger(&prior_t, &nu0, &nu_n, cfg)?;
            let a = most_probable_paths(g, &prior_t, x0, x_n, DEFAULT_TIE_TOL)?;
            let b = most_probable_paths(g, &sol_t, x0, x_n, DEFAULT_TIE_TOL)?;
            if a != b {
                mismatches += 1;
            }
            match &reference {
                Some(r) if *r != b => mismatches += 1,
                None => reference = Some(b),
                _ => {}
            }
        }
        let set: Vec<String> = reference.unwrap_or_default().iter().map(|p| p.to_string()).collect();
        Ok((mismatches as f64, format!("argmax {{{}}}", set.join(", "))))
    })()));

    checks.push(Check::from_result("restriction_ratio", 1e-9, (|| {
        let r = restriction_ratio_check(&prior, &sol, x0, x_n)?;
        Ok((r.spread, format!("{} paths, ratio {}", r.paths, round12(r.ratio))))
    })()));

    checks.push(Check::from_result("theorem7", 1e-9, (|| {
        let r = verify_theorem7(g, temperature, horizon, cfg)?;
        let value = if r.minimal_group_is_max { r.max_spread } else { f64::INFINITY };
        Ok((
            value,
            format!(
                "{} pairs, {} groups, minimal group maximal: {}",
                r.pairs, r.groups, r.minimal_group_is_max
            ),
        ))
    })()));

    debug_assert!(checks.iter().map(|c| c.name).eq(NAMES));
    Ok(checks)
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), CliError> {
    let g = match &args.graph {
        Some(p) => read_graph(p)?,
        None => crate::graph::fixtures::g9(),
    };
    let grid = parse_grid(&args.grid)?;
    let corrupt = args.corrupt_transition.as_deref().map(parse_corruption).transpose()?;
    let x_n = NodeId(args.to_delta.unwrap_or(g.node_count()));
    let checks = verify_checks(
        &g,
        NodeId(args.from_delta),
        x_n,
        args.steps,
        args.temperature,
        &grid,
        &args.solver.config(),
        corrupt,
    )?;
    let passed = checks.iter().all(|c| c.passed);
    let doc = json!({
        "command": "verify",
        "passed": passed,
        "checks": checks
            .iter()
            .map(|c| json!({
                "name": c.name,
                "passed": c.passed,
                "value": num(c.value),
                "tolerance": num(c.tolerance),
                "detail": c.detail,
            }))
            .collect::<Vec<_>>(),
    });
    emit(&args.out, &doc, || {
        let mut s = String::from("check,passed,value,tolerance\n");
        for c in &checks {
            s.push_str(&format!("{},{},{},{}\n", c.name, c.passed, csv_num(c.value), csv_num(c.tolerance)));
        }
        s
    })?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failed.join(", ")))
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Paths(a) => cmd_paths(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Verify(a) => cmd_verify(a),
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("NETBRIDGE_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Usage(format!("NETBRIDGE_THREADS must be a positive integer, got {value:?}")))?;
    // a pool may already exist when embedded; keep it
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to standard error.
pub fn run_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = configure_threads().and_then(|()| execute(&cli));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run() -> i32 {
    run_with(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::g9;

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round12(1.0 / 3.0), 0.333333333333);
        assert_eq!(round12(2.0 / 3.0), 0.666666666667);
        assert_eq!(round12(0.0), 0.0);
        assert_eq!(csv_num(f64::INFINITY), "inf");
        assert_eq!(csv_num(123456.7890123456), "123456.789012");
    }

    #[test]
    fn marginal_specs() {
        let m = parse_marginal(r#"{"delta": 3}"#, 4).unwrap();
        assert_eq!(m.weights().to_vec(), vec![0.0, 0.0, 1.0, 0.0]);
        let m = parse_marginal("[0.5, 0.5, 0, 0]", 4).unwrap();
        assert_eq!(m.weights()[1], 0.5);
        let m = parse_marginal(r#"{"weights": [0, 0, 0, 1]}"#, 4).unwrap();
        assert_eq!(m.weights()[3], 1.0);
        assert!(parse_marginal("[1, 0]", 4).is_err());
        assert!(parse_marginal("[0.5, 0.4, 0, 0]", 4).is_err());
        assert!(parse_marginal(r#"{"delta": 5}"#, 4).is_err());
        assert_eq!(parse_marginal("/nonexistent/m.json", 4).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0.1, 1,100").unwrap(), vec![0.1, 1.0, 100.0]);
        assert!(parse_grid("").is_err());
        assert!(parse_grid(" , ").is_err());
        assert!(parse_grid("1,x").is_err());
    }

    #[test]
    fn exit_codes() {
        let infeasible = CliError::Bridge(BridgeError::Infeasible { origin: 1, sink: 2 });
        assert_eq!(infeasible.exit_code(), 2);
        let slow = CliError::Bridge(BridgeError::NotConverged {
            sweeps: 1,
            residual: 1.0,
        });
        assert_eq!(slow.exit_code(), 3);
        let budget = CliError::Calibration(CalibrationError::BudgetOutOfRange {
            budget: 5.0,
            lower: 3.0,
            upper: 3.5,
        });
        assert_eq!(budget.exit_code(), 2);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(CliError::Verification("x".into()).exit_code(), 4);
    }

    #[test]
    fn verify_passes_on_fixture_and_flags_corruption() {
        let g = g9();
        let grid = [0.1, 0.5, 1.0, 2.0, 10.0];
        let cfg = SolverConfig::default();
        let checks = verify_checks(&g, NodeId(1), NodeId(9), 4, 1.0, &grid, &cfg, None).unwrap();
        for c in &checks {
            assert!(c.passed, "{c:?}");
        }
        let checks = verify_checks(&g, NodeId(1), NodeId(9), 4, 1.0, &grid, &cfg, Some((1, 1, 2, 0.9))).unwrap();
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        assert!(failed.contains(&"marginal_consistency"), "{failed:?}");
        assert!(failed.contains(&"oracle_equivalence"));
        let trivial = verify_checks(&g, NodeId(1), NodeId(9), 0, 1.0, &grid, &cfg, None).unwrap();
        assert!(trivial.iter().all(|c| c.passed));
    }
}
