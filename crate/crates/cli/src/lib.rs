//! Problem ingestion, solver selection, report and trace emission, and
//! solver comparison for the `bregman-ab` command.

mod commands;
mod problem;
mod report;

pub use commands::{
    cmd_compare, cmd_solve, compare_algorithms, execute_compare, execute_solve, run_algorithm, Algorithm, CompareArgs,
    Comparison, GapPoint, ScheduleArg, SolveArgs, COMPARE_HEADER,
};
pub use problem::{load_problem, parse_problem, parse_problem_file, problem_to_json, ProblemFile};
pub use report::{
    emit_trace, format_real, round_sig, trace_csv, ConfigEcho, RunReport, SIGNIFICANT_DIGITS, TRACE_HEADER,
};
