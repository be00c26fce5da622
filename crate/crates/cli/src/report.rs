//! Run reports (JSON) and iteration traces (CSV).

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use bregman_ab::{IterationTrace, RdSolution, Termination};
use serde::{Deserialize, Serialize};

pub const SIGNIFICANT_DIGITS: usize = 12;
pub const TRACE_HEADER: &str = "iter,objective,constraint_residual,min_entry,cumulative_inner,elapsed_ns";
const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Shortest text that reads back as `round_sig(x)`.
pub fn format_real(x: f64) -> String {
    let r = round_sig(x);
    if r == 0.0 {
        "0".into()
    } else if !r.is_finite() || (1e-4..1e15).contains(&r.abs()) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

/// Solver settings echoed into a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub gamma: f64,
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub algorithm: String,
    pub config: ConfigEcho,
    /// Final objective in nats.
    pub objective: f64,
    pub mutual_information: f64,
    /// `w[x][y] = W(y|x)`.
    pub w: Vec<Vec<f64>>,
    pub distortion: f64,
    pub iterations: usize,
    pub cumulative_inner: usize,
    pub termination: String,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn from_solution(solution: &RdSolution, config: ConfigEcho) -> Result<Self> {
        let report = Self {
            algorithm: solution.algorithm.clone(),
            config: ConfigEcho {
                gamma: round_sig(config.gamma),
                epsilon: round_sig(config.epsilon),
                tol: round_sig(config.tol),
                ..config
            },
            objective: round_sig(solution.objective),
            mutual_information: round_sig(solution.mutual_information),
            w: solution.w.rows().iter().map(|row| row.iter().copied().map(round_sig).collect()).collect(),
            distortion: round_sig(solution.distortion),
            iterations: solution.iterations,
            cumulative_inner: solution.cumulative_inner,
            termination: termination_text(&solution.termination),
            warnings: solution.trace.warnings.clone(),
        };
        report.validate()?;
        Ok(report)
    }

    /// Checks that `w` is row-stochastic.
    pub fn validate(&self) -> Result<()> {
        for (x, row) in self.w.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                bail!("report channel row {x} has a negative or non-finite entry");
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_SUM_TOLERANCE {
                bail!("report channel row {x} sums to {total}, not 1");
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text).context("malformed run report")?;
        report.validate()?;
        Ok(report)
    }

    /// 0 on tolerance termination, 2 on the iteration cap, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        exit_code_for(&self.termination)
    }
}

fn termination_text(t: &Termination) -> String {
    match t {
        Termination::Error(message) => format!("error: {message}"),
        other => other.label().to_string(),
    }
}

pub(crate) fn exit_code_for(termination: &str) -> i32 {
    match termination {
        "tolerance" => 0,
        "max-iter" => 2,
        _ => 1,
    }
}

/// The trace as CSV text under [`TRACE_HEADER`].
pub fn trace_csv(trace: &IterationTrace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for row in &trace.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.iter,
            format_real(row.objective),
            format_real(row.constraint_residual),
            row.min_entry.map(format_real).unwrap_or_default(),
            row.cumulative_inner,
            row.elapsed_ns
        );
    }
    out
}

pub fn emit_trace(trace: &IterationTrace, path: &Path) -> Result<()> {
    std::fs::write(path, trace_csv(trace)).with_context(|| format!("cannot write trace {}", path.display()))
}
