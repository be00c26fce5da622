//! Problem files: a JSON object with keys `p_x`, `distortion` and `c`.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use bregman_ab::{DiscreteDistribution, RdProblem};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

const KEYS: [&str; 3] = ["p_x", "distortion", "c"];
const SUM_TOLERANCE: f64 = 1e-9;

/// The raw contents of a problem file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub p_x: Vec<f64>,
    pub distortion: Vec<Vec<f64>>,
    pub c: f64,
}

impl ProblemFile {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// 1-based line of the first occurrence of `"key"` in the source text.
fn key_line(text: &str, key: &str) -> usize {
    let quoted = format!("\"{key}\"");
    text.find(&quoted).map(|at| text[..at].matches('\n').count() + 1).unwrap_or(1)
}

struct Located<'a> {
    text: &'a str,
}

impl Located<'_> {
    fn err(&self, key: &str, message: impl std::fmt::Display) -> anyhow::Error {
        anyhow!("\"{key}\" (line {}): {message}", key_line(self.text, key))
    }

    fn numbers(&self, key: &str, value: &Value) -> Result<Vec<f64>> {
        let items = value.as_array().ok_or_else(|| self.err(key, "expected an array of numbers"))?;
        items.iter().map(|v| v.as_f64().ok_or_else(|| self.err(key, format!("expected a number, found {v}")))).collect()
    }
}

fn field<'v>(object: &'v Map<String, Value>, key: &str) -> Result<&'v Value> {
    object.get(key).ok_or_else(|| anyhow!("missing key \"{key}\""))
}

/// Parses the JSON text of a problem file without checking invariants.
pub fn parse_problem_file(text: &str) -> Result<ProblemFile> {
    let value: Value = serde_json::from_str(text).context("problem file is not valid JSON")?;
    let object = value.as_object().ok_or_else(|| anyhow!("problem file must be a JSON object"))?;
    let at = Located { text };
    if let Some(extra) = object.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(at.err(extra, "unknown key; expected p_x, distortion and c"));
    }
    let p_x = at.numbers("p_x", field(object, "p_x")?)?;
    let rows =
        field(object, "distortion")?.as_array().ok_or_else(|| at.err("distortion", "expected an array of rows"))?;
    let distortion = rows.iter().map(|row| at.numbers("distortion", row)).collect::<Result<Vec<_>>>()?;
    let c = field(object, "c")?.as_f64().ok_or_else(|| at.err("c", "expected a number"))?;
    Ok(ProblemFile { p_x, distortion, c })
}

/// Parses and validates a problem file, naming the offending key and its
/// line in every error.
pub fn parse_problem(text: &str) -> Result<RdProblem> {
    let file = parse_problem_file(text)?;
    let at = Located { text };
    let d1 = file.p_x.len();
    if d1 == 0 {
        return Err(at.err("p_x", "must be non-empty"));
    }
    if file.p_x.iter().any(|p| *p <= 0.0) {
        return Err(at.err("p_x", "entries must be strictly positive"));
    }
    let total: f64 = file.p_x.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(at.err("p_x", format!("p_x must sum to 1 (sum is {total})")));
    }
    if file.distortion.len() != d1 {
        return Err(at.err("distortion", format!("has {} rows but p_x has {d1} entries", file.distortion.len())));
    }
    let d2 = file.distortion[0].len();
    if let Some((x, row)) = file.distortion.iter().enumerate().find(|(_, r)| r.len() != d2) {
        return Err(at.err("distortion", format!("row {x} has length {}, expected {d2}", row.len())));
    }
    if d2 < 2 {
        let what = if d1 == 1 { "degenerate alphabet (1×1)" } else { "a single reproduction symbol" };
        return Err(at.err("distortion", format!("{what}; at least 2 columns are required")));
    }
    let lo: f64 =
        file.p_x.iter().zip(&file.distortion).map(|(p, r)| p * r.iter().copied().fold(f64::INFINITY, f64::min)).sum();
    let hi: f64 = file
        .p_x
        .iter()
        .zip(&file.distortion)
        .map(|(p, r)| p * r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    if !(file.c > lo && file.c < hi) {
        return Err(at.err("c", format!("c must lie strictly between {lo} and {hi}, got {}", file.c)));
    }
    let p_x = DiscreteDistribution::normalized(file.p_x).map_err(|e| at.err("p_x", e))?;
    RdProblem::new(p_x, file.distortion, file.c).map_err(|e| at.err("distortion", e))
}

pub fn load_problem(path: &Path) -> Result<RdProblem> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read problem file {}", path.display()))?;
    parse_problem(&text).with_context(|| format!("invalid problem file {}", path.display()))
}

/// Writes a problem in the file format.
pub fn problem_to_json(problem: &RdProblem) -> Result<String> {
    ProblemFile { p_x: problem.p_x().probs().to_vec(), distortion: problem.distortion().to_vec(), c: problem.level() }
        .to_json()
}
