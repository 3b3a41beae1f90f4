mod csv_out;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use tightbox_core::conic::{Backend, SolverSettings};
use tightbox_core::covbound::{solve_cov_bound_with, MeanStd};
use tightbox_core::graphs::{self, GraphKind};
use tightbox_core::moments::{
    self, dro_settings, k_cone_member, m_cone_member, ConePoint, MomentSpec, PiecewiseQuadratic, MEMBERSHIP_TOL,
};
use tightbox_core::qsmb::{solve_qsmb, QsmbProblem, RelaxKind};
use tightbox_core::Error;

use csv_out::{write_csv, Cell, CsvError};

#[derive(Parser, Debug)]
#[command(name = "tightbox", version, about = "Tight SDP bounds for box-constrained submodular quadratics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a box-constrained quadratic through one of its SDP relaxations.
    SolveQsmb(QsmbArgs),
    /// Test membership of a point in the moment cone M or the polynomial cone K.
    CheckCone(ConeArgs),
    /// Worst-case expectation of a piecewise quadratic over a moment ambiguity set.
    Dro(DroArgs),
    /// Largest E[ξ^T A ξ] given means and standard deviations on the box.
    Covbound(CovArgs),
    /// Gap between the exact minimum expected energy and the pairwise bound.
    ExperimentTable2(Table2Args),
    /// Worst-case subquantile curves of a path graph's energy.
    ExperimentFigure1(Figure1Args),
}

#[derive(Args, Debug)]
struct IoArgs {
    /// JSON problem file.
    #[arg(long)]
    input: PathBuf,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// Gap and feasibility tolerance of the conic solver.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_enum, default_value_t = BackendArg::Internal)]
    backend: BackendArg,
    /// Directory receiving program dumps with `--backend dump`.
    #[arg(long, default_value = "dumps")]
    dump_dir: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Internal,
    Dump,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum RelaxArg {
    Basic,
    Tight,
    Full,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum AmbiguityArg {
    P,
    Q,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Path,
    Star,
    Complete,
}

impl From<KindArg> for GraphKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Path => GraphKind::Path,
            KindArg::Star => GraphKind::Star,
            KindArg::Complete => GraphKind::Complete,
        }
    }
}

#[derive(Args, Debug)]
struct QsmbArgs {
    #[command(flatten)]
    io: IoArgs,
    #[arg(long, value_enum, default_value_t = RelaxArg::Tight)]
    relax: RelaxArg,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct ConeArgs {
    #[command(flatten)]
    io: IoArgs,
    /// Membership tolerance.
    #[arg(long, default_value_t = MEMBERSHIP_TOL)]
    tol: f64,
}

#[derive(Args, Debug)]
struct DroArgs {
    #[command(flatten)]
    io: IoArgs,
    #[arg(long, value_enum, default_value_t = AmbiguityArg::P)]
    ambiguity: AmbiguityArg,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct CovArgs {
    #[command(flatten)]
    io: IoArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct Table2Args {
    /// Graph families (comma separated).
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [KindArg::Path, KindArg::Star, KindArg::Complete])]
    kind: Vec<KindArg>,
    /// Vertex counts (comma separated).
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 10, 20, 50], value_parser = clap::value_parser!(usize))]
    n: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "table2.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Figure1Args {
    /// Number of path vertices.
    #[arg(long, conflicts_with = "full")]
    n: Option<usize>,
    /// Use the full-size path on 50 vertices.
    #[arg(long)]
    full: bool,
    /// `start:step:stop` or a comma-separated list, values in [0, 1).
    #[arg(long, default_value = "0:0.05:0.9", value_parser = parse_alpha_grid)]
    alpha_grid: AlphaGrid,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "figure1.csv")]
    out: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
struct AlphaGrid(Vec<f64>);

fn parse_alpha_grid(s: &str) -> Result<AlphaGrid, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    let values = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err("expected start:step:stop".into());
        }
        let (start, step, stop) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || stop < start {
            return Err("step must be positive and stop at least start".into());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=count).map(|k| start + k as f64 * step).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if let Some(a) = values.iter().find(|a| !(0.0..1.0).contains(*a)) {
        return Err(format!("alpha = {a} is outside [0, 1)"));
    }
    if values.is_empty() {
        return Err("empty alpha grid".into());
    }
    Ok(AlphaGrid(values))
}

/// A failed run and its exit status.
#[derive(Debug)]
enum Failure {
    Io(String),
    Json(String),
    Solve(Error),
    Output(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 3,
            Failure::Json(_) => 4,
            Failure::Solve(_) | Failure::Output(_) => 1,
        }
    }
}

impl From<CsvError> for Failure {
    fn from(e: CsvError) -> Self {
        match e {
            CsvError::Io(e) => Failure::Io(e.to_string()),
            other => Failure::Output(other.to_string()),
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Json(format!("{}: {e}", path.display())))
}

fn write_text(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes()).and_then(|_| so.flush()).map_err(|e| Failure::Io(e.to_string()))
        }
    }
}

fn to_pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

fn settings_json(s: &SolverSettings) -> Value {
    json!({
        "gap_tol": s.gap_tol,
        "feas_tol": s.feas_tol,
        "max_iterations": s.max_iterations,
        "step_fraction": s.step_fraction,
        "backend": match &s.backend {
            Backend::Internal => json!("internal"),
            Backend::Dump(dir) => json!({ "dump": dir }),
        },
    })
}

impl SolverArgs {
    /// Settings to use, or `None` to keep the entry point's own defaults.
    fn resolve(&self) -> Option<SolverSettings> {
        if self.tol.is_none() && self.backend == BackendArg::Internal {
            return None;
        }
        let mut s = self.tol.map(SolverSettings::with_tolerance).unwrap_or_default();
        if self.backend == BackendArg::Dump {
            s.backend = Backend::Dump(self.dump_dir.clone());
        }
        Some(s)
    }
}

/// Name and resolved settings of the current invocation.
struct Run {
    name: &'static str,
    settings: Value,
}

impl Run {
    fn emit(&self, out: Option<&Path>, result: impl Serialize) -> Result<(), Failure> {
        let doc = json!({ "command": self.name, "settings": self.settings, "result": result });
        write_text(out, &to_pretty(&doc))
    }
}

fn solver_settings(args: &SolverArgs, fallback: SolverSettings) -> (SolverSettings, Value) {
    let s = args.resolve().unwrap_or(fallback);
    let echo = settings_json(&s);
    (s, echo)
}

fn run_qsmb(a: &QsmbArgs, run: &mut Run) -> Result<(), Failure> {
    let (s, echo) = solver_settings(&a.solver, SolverSettings::default());
    let kind = match a.relax {
        RelaxArg::Basic => RelaxKind::Basic,
        RelaxArg::Tight => RelaxKind::TightRlt,
        RelaxArg::Full => RelaxKind::FullRlt,
    };
    run.settings = json!({ "solver": echo, "relax": kind });
    let p: QsmbProblem = read_json(&a.io.input)?;
    let res = solve_qsmb(&p, kind, &s).map_err(Failure::Solve)?;
    run.emit(a.io.out.as_deref(), &res)
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum ConeName {
    M,
    K,
}

#[derive(Deserialize)]
struct ConeInput {
    cone: ConeName,
    point: ConePoint,
}

#[derive(Serialize)]
struct MMembership {
    member: bool,
    #[serde(rename = "W")]
    w: Option<tightbox_core::symmat::SymMatrix>,
}

fn run_cone(a: &ConeArgs, run: &mut Run) -> Result<(), Failure> {
    run.settings = json!({ "tol": a.tol });
    let input: ConeInput = read_json(&a.io.input)?;
    match input.cone {
        ConeName::K => {
            let r = k_cone_member(&input.point, a.tol).map_err(Failure::Solve)?;
            run.emit(a.io.out.as_deref(), json!({ "cone": "k", "membership": r }))
        }
        ConeName::M => {
            let (member, w) = m_cone_member(&input.point, a.tol).map_err(Failure::Solve)?;
            run.emit(a.io.out.as_deref(), json!({ "cone": "m", "membership": MMembership { member, w } }))
        }
    }
}

#[derive(Deserialize)]
struct DroInput {
    moments: MomentSpec,
    objective: PiecewiseQuadratic,
}

fn run_dro(a: &DroArgs, run: &mut Run) -> Result<(), Failure> {
    let custom = a.solver.resolve();
    let echo = match &custom {
        Some(s) => settings_json(s),
        None => json!({ "solver": settings_json(&dro_settings()), "fallback": settings_json(&SolverSettings::default()) }),
    };
    run.settings = json!({ "solver": echo, "ambiguity": format!("{:?}", a.ambiguity).to_lowercase() });
    let input: DroInput = read_json(&a.io.input)?;
    let (spec, f) = (&input.moments, &input.objective);
    let res = match (a.ambiguity, &custom) {
        (AmbiguityArg::P, None) => moments::solve_dro_p(spec, f),
        (AmbiguityArg::P, Some(s)) => moments::solve_dro_p_with(spec, f, s),
        (AmbiguityArg::Q, None) => moments::solve_dro_q(spec, f),
        (AmbiguityArg::Q, Some(s)) => moments::solve_dro_q_with(spec, f, s),
    }
    .map_err(Failure::Solve)?;
    run.emit(a.io.out.as_deref(), &res)
}

#[derive(Deserialize)]
struct CovInput {
    #[serde(rename = "A")]
    a: tightbox_core::symmat::SymMatrix,
    moments: MeanStd,
}

fn run_cov(a: &CovArgs, run: &mut Run) -> Result<(), Failure> {
    let (s, echo) = solver_settings(&a.solver, SolverSettings::default());
    run.settings = json!({ "solver": echo });
    let input: CovInput = read_json(&a.io.input)?;
    let res = solve_cov_bound_with(&input.a, &input.moments, &s).map_err(Failure::Solve)?;
    run.emit(a.io.out.as_deref(), &res)
}

fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

fn write_meta(out: &Path, doc: &Value) -> Result<(), Failure> {
    let p = meta_path(out);
    std::fs::write(&p, to_pretty(doc)).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))
}

fn run_table2(a: &Table2Args, run: &mut Run) -> Result<(), Failure> {
    let workers = a.workers.unwrap_or_else(graphs::default_workers);
    run.settings = json!({
        "energy_solver": settings_json(&graphs::energy_settings()),
        "seed": a.seed,
        "instances": a.instances,
        "workers": workers,
        "zero_energy_tol": graphs::ZERO_ENERGY_TOL,
    });
    let mut rows = Vec::new();
    let mut redraws = Vec::new();
    for &n in &a.n {
        for &k in &a.kind {
            let kind = GraphKind::from(k);
            let s = graphs::gap_experiment(kind, n, a.instances, a.seed, workers).map_err(Failure::Solve)?;
            rows.push(vec![
                Cell::Text(kind.to_string()),
                Cell::Int(n as u64),
                Cell::Float(s.mean_gap_pct),
                Cell::Float(s.std_gap_pct),
                Cell::Int(s.instances as u64),
                Cell::Int(s.seed),
            ]);
            redraws.push(json!({ "kind": kind, "n": n, "redraws": s.redraws }));
        }
    }
    write_csv(&a.out, &["kind", "n", "mean_gap_pct", "std_gap_pct", "instances", "seed"], &rows)?;
    write_meta(&a.out, &json!({ "command": run.name, "settings": run.settings, "redraws": redraws }))
}

fn run_figure1(a: &Figure1Args, run: &mut Run) -> Result<(), Failure> {
    let n = a.n.unwrap_or(if a.full { 50 } else { 15 });
    let workers = a.workers.unwrap_or_else(graphs::default_workers);
    run.settings = json!({
        "dro_solver": settings_json(&dro_settings()),
        "n": n,
        "alpha_grid": a.alpha_grid.0,
        "workers": workers,
    });
    let curve = graphs::figure1(n, &a.alpha_grid.0, workers).map_err(Failure::Solve)?;
    let rows: Vec<Vec<Cell>> =
        curve.iter().map(|r| vec![Cell::Float(r.alpha), Cell::Float(r.bound_p), Cell::Float(r.bound_q)]).collect();
    write_csv(&a.out, &["alpha", "bound_P", "bound_Q"], &rows)?;
    write_meta(&a.out, &json!({ "command": run.name, "settings": run.settings }))
}

fn diagnostic(run: &Run, e: &Error) -> Value {
    let mut err = json!({ "message": e.to_string() });
    match e {
        Error::Solver { status } => err["status"] = json!(status),
        Error::PreconditionViolated { which, .. } => err["precondition"] = json!(which),
        Error::InstanceFailed { index, instance, source } => {
            err["index"] = json!(index);
            err["instance"] = serde_json::from_str(instance).unwrap_or_else(|_| json!(instance));
            err["cause"] = json!(source.to_string());
        }
        _ => {}
    }
    json!({ "command": run.name, "settings": run.settings, "error": err })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let name = match &cli.command {
        Command::SolveQsmb(_) => "solve-qsmb",
        Command::CheckCone(_) => "check-cone",
        Command::Dro(_) => "dro",
        Command::Covbound(_) => "covbound",
        Command::ExperimentTable2(_) => "experiment-table2",
        Command::ExperimentFigure1(_) => "experiment-figure1",
    };
    let mut run = Run { name, settings: Value::Null };
    let outcome = match &cli.command {
        Command::SolveQsmb(a) => run_qsmb(a, &mut run),
        Command::CheckCone(a) => run_cone(a, &mut run),
        Command::Dro(a) => run_dro(a, &mut run),
        Command::Covbound(a) => run_cov(a, &mut run),
        Command::ExperimentTable2(a) => run_table2(a, &mut run),
        Command::ExperimentFigure1(a) => run_figure1(a, &mut run),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Solve(e) => {
                    eprintln!("tightbox {name}: {e}");
                    print!("{}", to_pretty(&diagnostic(&run, e)));
                }
                Failure::Io(m) | Failure::Json(m) | Failure::Output(m) => eprintln!("tightbox {name}: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
