//! The `solve` and `compare` subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bregman_ab::{
    build_rd_basis, em_solve, em_solve_newton, rd_solve_minfree, rd_solve_mirror, RdProblem, RdSolution, Schedule,
    SolverConfig,
};
use clap::{Args, ValueEnum};

use crate::problem::load_problem;
use crate::report::{emit_trace, exit_code_for, format_real, ConfigEcho, RunReport};

pub const COMPARE_HEADER: &str = "algorithm,cumulative_inner_iterations,objective_gap";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algorithm {
    Minfree,
    Em,
    EmNewton,
    Mirror,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    F1,
    F2,
}

impl From<ScheduleArg> for Schedule {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::F1 => Schedule::F1,
            ScheduleArg::F2 => Schedule::F2,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// Problem file (JSON with p_x, distortion, c).
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long, value_enum, default_value_t = Algorithm::Minfree)]
    pub algorithm: Algorithm,
    /// Step parameter of minfree and mirror.
    #[arg(long, default_value_t = 50.0)]
    pub gamma: f64,
    /// Clipping constant of the objective.
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    /// Relative objective decrease at which iteration stops.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 10000)]
    pub max_iter: usize,
    /// Inner-iteration schedule of em-newton.
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,
    /// Write the iteration trace as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Reserved; echoed into the report.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SolveArgs {
    pub fn new(problem: impl Into<PathBuf>, algorithm: Algorithm) -> Self {
        Self {
            problem: problem.into(),
            algorithm,
            gamma: 50.0,
            epsilon: 1e-4,
            tol: 1e-10,
            max_iter: 10000,
            schedule: None,
            trace: None,
            out: None,
            seed: 0,
        }
    }

    fn config(&self) -> Result<SolverConfig> {
        let config = SolverConfig {
            gamma: self.gamma,
            max_iterations: self.max_iter,
            objective_tolerance: self.tol,
            ..SolverConfig::default()
        };
        config.validate()?;
        Ok(config)
    }

    fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            gamma: self.gamma,
            epsilon: self.epsilon,
            tol: self.tol,
            max_iter: self.max_iter,
            schedule: (self.algorithm == Algorithm::EmNewton)
                .then(|| Schedule::from(self.schedule.unwrap_or(ScheduleArg::F1)).label()),
            seed: self.seed,
        }
    }
}

/// Runs one solver on an already loaded problem.
pub fn run_algorithm(problem: &RdProblem, args: &SolveArgs) -> Result<RdSolution> {
    if args.schedule.is_some() && args.algorithm != Algorithm::EmNewton {
        bail!("--schedule applies only to em-newton");
    }
    let config = args.config()?;
    let zero = || -> Result<Vec<f64>> { Ok(vec![0.0; build_rd_basis(problem)?.free_count()]) };
    let solution = match args.algorithm {
        Algorithm::Minfree => rd_solve_minfree(problem, &config, args.epsilon, &zero()?)?,
        Algorithm::Mirror => rd_solve_mirror(problem, &config, args.epsilon, &zero()?)?,
        Algorithm::Em => em_solve(problem, &config)?,
        Algorithm::EmNewton => em_solve_newton(problem, &config, args.schedule.unwrap_or(ScheduleArg::F1).into())?,
    };
    Ok(solution)
}

/// Loads, solves, writes the trace and the report, and returns the report.
pub fn execute_solve(args: &SolveArgs) -> Result<RunReport> {
    let problem = load_problem(&args.problem)?;
    let solution = run_algorithm(&problem, args)?;
    if let Some(path) = &args.trace {
        emit_trace(&solution.trace, path)?;
    }
    let report = RunReport::from_solution(&solution, args.echo())?;
    let json = report.to_json()?;
    match &args.out {
        Some(path) => std::fs::write(path, json).with_context(|| format!("cannot write report {}", path.display()))?,
        None => print!("{json}"),
    }
    Ok(report)
}

pub fn cmd_solve(args: &SolveArgs) -> i32 {
    match execute_solve(args) {
        Ok(report) => report.exit_code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// Long-format CSV of objective gaps.
    #[arg(long)]
    pub out: PathBuf,
    /// Step parameter of minfree.
    #[arg(long, default_value_t = 50.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 10000)]
    pub max_iter: usize,
}

impl CompareArgs {
    pub fn new(problem: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self { problem: problem.into(), out: out.into(), gamma: 50.0, epsilon: 1e-4, tol: 1e-10, max_iter: 10000 }
    }
}

/// One point of a gap curve.
#[derive(Debug, Clone, PartialEq)]
pub struct GapPoint {
    pub algorithm: String,
    pub cumulative_inner: usize,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub runs: Vec<RdSolution>,
    /// Smallest final objective across runs.
    pub best: f64,
    pub points: Vec<GapPoint>,
}

impl Comparison {
    pub fn curve(&self, algorithm: &str) -> Vec<&GapPoint> {
        self.points.iter().filter(|p| p.algorithm == algorithm).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(COMPARE_HEADER);
        out.push('\n');
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.algorithm, p.cumulative_inner, format_real(p.gap));
        }
        out
    }

    pub fn exit_code(&self) -> i32 {
        self.runs.iter().map(|r| exit_code_for(r.termination.label())).max_by_key(|c| (*c == 1, *c)).unwrap_or(0)
    }
}

/// Runs minfree, em-newton with `f₁` and em-newton with `f₂` on the same
/// problem and measures every recorded objective against the best final one.
pub fn compare_algorithms(problem: &RdProblem, args: &CompareArgs) -> Result<Comparison> {
    let base = |algorithm, schedule| SolveArgs {
        gamma: args.gamma,
        epsilon: args.epsilon,
        tol: args.tol,
        max_iter: args.max_iter,
        schedule,
        ..SolveArgs::new(&args.problem, algorithm)
    };
    let jobs = [
        base(Algorithm::Minfree, None),
        base(Algorithm::EmNewton, Some(ScheduleArg::F1)),
        base(Algorithm::EmNewton, Some(ScheduleArg::F2)),
    ];
    let runs = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs.iter().map(|job| scope.spawn(move || run_algorithm(problem, job))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| bail!("solver thread panicked")))
            .collect::<Result<Vec<_>>>()
    })?;
    let best = runs.iter().map(|r| r.objective).fold(f64::INFINITY, f64::min);
    let points = runs
        .iter()
        .flat_map(|run| {
            run.trace.rows.iter().map(move |row| GapPoint {
                algorithm: run.algorithm.clone(),
                cumulative_inner: row.cumulative_inner,
                gap: row.objective - best,
            })
        })
        .collect();
    Ok(Comparison { runs, best, points })
}

pub fn execute_compare(args: &CompareArgs) -> Result<Comparison> {
    let problem = load_problem(&args.problem)?;
    let comparison = compare_algorithms(&problem, args)?;
    write_file(&args.out, &comparison.to_csv())?;
    Ok(comparison)
}

pub fn cmd_compare(args: &CompareArgs) -> i32 {
    match execute_compare(args) {
        Ok(comparison) => comparison.exit_code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}
