//! `riccati` command-line front end.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod output;
pub mod problem;

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use riccati_core::certify::{alpha_scan, certify_scalar, Certificate, ALPHA_HI, ALPHA_LO};
use riccati_core::demos::{Rotation2d, Scalar1d};
use riccati_core::lqmc::{verify_optimality, SimConfig};
use riccati_core::{quasilinearize, RiccatiProblem, RiccatiSolution, SolverOptions};
use serde_json::json;

use output::{finite_or_null, num, Report};
use problem::{parse_problem_file, problem_to_string, InputError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECTED: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_INPUT: i32 = 4;

const DEFAULT_DEMO_GRID: usize = 1000;

#[derive(Debug, Parser)]
#[command(
    name = "riccati",
    version,
    about = "Solve and certify indefinite Riccati differential equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve by quasi-linearization and write P, gap (and gain in JSON).
    Solve(FileArgs),
    /// Check the scalar sufficient condition for one alpha, or the best one.
    Certify(FileArgs),
    /// Margin of the scalar condition over a grid of alpha values.
    Scan(FileArgs),
    /// Monte Carlo cost of the optimal feedback against x0ᵀP(0)x0.
    Simulate(FileArgs),
    /// Run an action on a built-in example problem.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
struct FileArgs {
    /// Problem file (JSON).
    problem: PathBuf,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Debug, Args)]
struct DemoArgs {
    name: DemoName,
    action: Action,
    #[command(flatten)]
    params: DemoParams,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DemoName {
    #[value(name = "2d-rotation")]
    Rotation2d,
    #[value(name = "1d-general")]
    General1d,
    #[value(name = "1d-constant")]
    Constant1d,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Action {
    Solve,
    Certify,
    Scan,
    Simulate,
    /// Print the problem as a JSON problem file.
    Export,
}

#[derive(Debug, Args)]
struct DemoParams {
    #[arg(long, allow_negative_numbers = true)]
    a1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    a2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    r1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    r2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    a: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    b: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    c: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    q: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    r: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct Opts {
    /// Number of grid steps (overrides the file's grid_points).
    #[arg(long)]
    grid: Option<usize>,
    /// Convergence tolerance of the iteration.
    #[arg(long)]
    tol: Option<f64>,
    /// Certify at this alpha instead of searching.
    #[arg(long, conflicts_with = "alpha_scan")]
    alpha: Option<f64>,
    /// Search alpha for the largest margin (the default for certify).
    #[arg(long)]
    alpha_scan: bool,
    /// Coarse alpha points for scan and alpha search.
    #[arg(long, default_value_t = 64)]
    points: usize,
    /// Seed of the Monte Carlo streams (required by simulate).
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo paths.
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    /// Euler–Maruyama steps (defaults to the grid steps).
    #[arg(long)]
    sim_steps: Option<usize>,
    /// Initial state, comma separated (defaults to the first unit vector).
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    /// Write the primary output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

/// Failure that ends a command with a given exit code.
struct Exit {
    code: i32,
    message: String,
}

impl From<InputError> for Exit {
    fn from(e: InputError) -> Self {
        input_error(e.to_string())
    }
}

impl From<io::Error> for Exit {
    fn from(e: io::Error) -> Self {
        input_error(format!("I/O error: {e}"))
    }
}

fn input_error(message: impl Into<String>) -> Exit {
    Exit {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                return EXIT_INPUT;
            }
            let _ = write!(stdout, "{}", e.render());
            return EXIT_OK;
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(code) => code,
        Err(Exit { code, message }) => {
            let _ = writeln!(stderr, "error: {message}");
            code
        }
    }
}

fn dispatch(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Exit> {
    let (prob, action, opts) = match cmd {
        Command::Solve(f) => (
            parse_problem_file(&f.problem, f.opts.grid)?,
            Action::Solve,
            f.opts,
        ),
        Command::Certify(f) => (
            parse_problem_file(&f.problem, f.opts.grid)?,
            Action::Certify,
            f.opts,
        ),
        Command::Scan(f) => (
            parse_problem_file(&f.problem, f.opts.grid)?,
            Action::Scan,
            f.opts,
        ),
        Command::Simulate(f) => (
            parse_problem_file(&f.problem, f.opts.grid)?,
            Action::Simulate,
            f.opts,
        ),
        Command::Demo(d) => {
            let prob = demo_problem(d.name, &d.params, d.opts.grid.unwrap_or(DEFAULT_DEMO_GRID))?;
            (prob, d.action, d.opts)
        }
    };
    let mut sink: Box<dyn Write + '_> = match &opts.out {
        Some(path) => Box::new(
            File::create(path)
                .map_err(|e| input_error(format!("cannot create {}: {e}", path.display())))?,
        ),
        None => Box::new(&mut *stdout),
    };
    let code = match action {
        Action::Solve => cmd_solve(&prob, &opts, &mut *sink, stderr)?,
        Action::Certify => cmd_certify(&prob, &opts, &mut *sink)?,
        Action::Scan => cmd_scan(&prob, &opts, &mut *sink, stderr)?,
        Action::Simulate => cmd_simulate(&prob, &opts, &mut *sink, stderr)?,
        Action::Export => {
            writeln!(sink, "{}", problem_to_string(&prob))?;
            EXIT_OK
        }
    };
    sink.flush()?;
    Ok(code)
}

fn demo_problem(name: DemoName, p: &DemoParams, grid: usize) -> Result<RiccatiProblem, Exit> {
    let given = [
        ("a1", p.a1),
        ("a2", p.a2),
        ("r1", p.r1),
        ("r2", p.r2),
        ("a", p.a),
        ("b", p.b),
        ("c", p.c),
        ("q", p.q),
        ("r", p.r),
    ];
    let allowed: &[&str] = match name {
        DemoName::Rotation2d => &["a1", "a2", "r1", "r2"],
        DemoName::General1d => &["a", "b", "c", "q", "r"],
        DemoName::Constant1d => &["r"],
    };
    if let Some((flag, _)) = given
        .iter()
        .find(|(k, v)| v.is_some() && !allowed.contains(k))
    {
        return Err(input_error(format!("--{flag} does not apply to this demo")));
    }
    let prob = match name {
        DemoName::Rotation2d => {
            let d = Rotation2d::default();
            Rotation2d {
                a1: p.a1.unwrap_or(d.a1),
                a2: p.a2.unwrap_or(d.a2),
                r1: p.r1.unwrap_or(d.r1),
                r2: p.r2.unwrap_or(d.r2),
            }
            .problem(grid)
        }
        DemoName::General1d => {
            let d = Scalar1d::default();
            Scalar1d {
                a: p.a.unwrap_or(d.a),
                b: p.b.unwrap_or(d.b),
                c: p.c.unwrap_or(d.c),
                q: p.q.unwrap_or(d.q),
                r: p.r.unwrap_or(d.r),
            }
            .problem(grid)
        }
        DemoName::Constant1d => Scalar1d::constant(p.r.unwrap_or(-0.05)).problem(grid),
    };
    prob.map_err(|e| input_error(e.to_string()))
}

fn solver_options(opts: &Opts) -> Result<SolverOptions, Exit> {
    if let Some(tol) = opts.tol {
        if !(tol > 0.0) {
            return Err(input_error("--tol must be positive"));
        }
    }
    Ok(SolverOptions {
        conv_tol: opts.tol,
        ..SolverOptions::default()
    })
}

/// Solves, reporting a failure on stderr as exit code 3.
fn solve(
    prob: &RiccatiProblem,
    opts: &Opts,
    stderr: &mut dyn Write,
) -> Result<RiccatiSolution, Exit> {
    quasilinearize(prob, &solver_options(opts)?).map_err(|f| {
        let _ = writeln!(stderr, "status: failed");
        let _ = writeln!(stderr, "kind: {}", f.kind);
        if let Some(t) = f.at_time {
            let _ = writeln!(stderr, "at_time: {}", num(t));
        }
        let _ = writeln!(stderr, "iteration: {}", f.at_iteration);
        Exit {
            code: EXIT_SOLVER,
            message: f.to_string(),
        }
    })
}

fn cmd_solve(
    prob: &RiccatiProblem,
    opts: &Opts,
    out: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, Exit> {
    let sol = solve(prob, opts, stderr)?;
    output::write_diagnostics(stderr, &sol)?;
    match opts.format {
        Format::Csv => output::write_solution_csv(out, &sol)?,
        Format::Json => writeln!(out, "{}", output::solution_json(&sol))?,
    }
    Ok(EXIT_OK)
}

fn write_report(report: &Report, format: Format, out: &mut dyn Write) -> io::Result<()> {
    match format {
        Format::Csv => report.write_csv(out),
        Format::Json => writeln!(out, "{}", report.to_json()),
    }
}

fn verdict_code(cert: &Certificate) -> i32 {
    if cert.is_certified() {
        EXIT_OK
    } else {
        EXIT_REJECTED
    }
}

fn cmd_certify(prob: &RiccatiProblem, opts: &Opts, out: &mut dyn Write) -> Result<i32, Exit> {
    let cert = match opts.alpha {
        Some(alpha) => certify_scalar(prob, alpha).map_err(|e| input_error(e.to_string()))?,
        None => {
            alpha_scan(prob, opts.points)
                .map_err(|e| input_error(e.to_string()))?
                .1
        }
    };
    write_report(&Report::certificate(&cert), opts.format, out)?;
    Ok(verdict_code(&cert))
}

fn cmd_scan(
    prob: &RiccatiProblem,
    opts: &Opts,
    out: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, Exit> {
    let (best_alpha, best) =
        alpha_scan(prob, opts.points).map_err(|e| input_error(e.to_string()))?;
    let step = (ALPHA_HI - ALPHA_LO) / (opts.points - 1) as f64;
    let mut curve = Vec::with_capacity(opts.points);
    for i in 0..opts.points {
        let alpha = ALPHA_LO + i as f64 * step;
        curve.push(certify_scalar(prob, alpha).map_err(|e| input_error(e.to_string()))?);
    }
    writeln!(stderr, "best_alpha: {}", num(best_alpha))?;
    writeln!(stderr, "best_margin: {}", num(best.margin))?;
    writeln!(stderr, "verdict: {}", best.verdict.as_str())?;
    match opts.format {
        Format::Csv => {
            writeln!(out, "alpha,margin,verdict")?;
            for c in &curve {
                writeln!(
                    out,
                    "{},{},{}",
                    num(c.alpha),
                    num(c.margin),
                    c.verdict.as_str()
                )?;
            }
        }
        Format::Json => {
            let points: Vec<_> = curve
                .iter()
                .map(|c| json!({"alpha": c.alpha, "margin": finite_or_null(c.margin), "verdict": c.verdict.as_str()}))
                .collect();
            let doc = json!({"best": Report::certificate(&best).to_json(), "curve": points});
            writeln!(out, "{doc}")?;
        }
    }
    Ok(verdict_code(&best))
}

fn parse_x0(text: Option<&str>, dim: usize) -> Result<Vec<f64>, Exit> {
    let Some(text) = text else {
        let mut e1 = vec![0.0; dim];
        e1[0] = 1.0;
        return Ok(e1);
    };
    let x0: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| input_error(format!("--x0: {e}")))?;
    if x0.len() != dim {
        return Err(input_error(format!(
            "--x0 has {} entries, problem dimension is {dim}",
            x0.len()
        )));
    }
    Ok(x0)
}

fn cmd_simulate(
    prob: &RiccatiProblem,
    opts: &Opts,
    out: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, Exit> {
    let seed = opts
        .seed
        .ok_or_else(|| input_error("simulate requires --seed"))?;
    let cfg = SimConfig {
        n_paths: opts.paths,
        n_steps_sim: opts.sim_steps.unwrap_or(prob.grid().n_steps()),
        seed,
        x0: parse_x0(opts.x0.as_deref(), prob.dim())?,
    };
    let sol = solve(prob, opts, stderr)?;
    let report =
        verify_optimality(prob, &sol, &cfg, &[]).map_err(|e| input_error(e.to_string()))?;
    let est = report.optimal;
    let summary = Report(vec![
        ("mean", json!(est.mean)),
        ("std_error", finite_or_null(est.std_error)),
        ("n_paths", json!(est.n_paths)),
        ("predicted", json!(report.predicted)),
        ("allowance", json!(report.allowance)),
        ("matches", json!(report.cost_matches)),
    ]);
    write_report(&summary, opts.format, out)?;
    Ok(if report.cost_matches {
        EXIT_OK
    } else {
        EXIT_REJECTED
    })
}
