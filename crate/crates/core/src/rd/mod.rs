//! Rate-distortion problems: data types, the affine joint-table
//! parametrization, the minimization-free iteration and the em baselines.

mod basis;
mod em;
mod general;

pub use basis::{
    build_rd_basis, interior_start, joint_from_eta, natural_of_free_masses, rd_objective, rd_omega, rd_solve_minfree,
    rd_solve_mirror, RdBasis, RdForm, RdOmega,
};
pub use em::{em_solve, em_solve_newton, em_solve_with, f_hat, tilted_channel, EmOptions, FHat, Schedule};
pub use general::{em_objective_general, MixtureSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{IterationTrace, Termination};

const SUM_TOLERANCE: f64 = 1e-12;

/// A probability vector over a finite alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Argument("distribution must be non-empty".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Argument("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Argument(format!("probabilities must sum to 1 (sum is {total})")));
        }
        Ok(Self { probs })
    }

    /// Rescales non-negative weights to sum to one.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Argument("weights must have a positive finite sum".into()));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::normalized(vec![1.0; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

impl TryFrom<Vec<f64>> for DiscreteDistribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DiscreteDistribution> for Vec<f64> {
    fn from(d: DiscreteDistribution) -> Self {
        d.probs
    }
}

/// A channel `W(y|x)` stored source-row-first: `rows[x][y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ConditionalDistribution {
    rows: Vec<Vec<f64>>,
}

impl ConditionalDistribution {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || width == 0 {
            return Err(Error::Argument("channel must be non-empty".into()));
        }
        for (x, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Argument(format!("channel row {x} has length {}, expected {width}", row.len())));
            }
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::Argument(format!("channel row {x} has a negative or non-finite entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::Argument(format!("channel row {x} sums to {total}, not 1")));
            }
        }
        Ok(Self { rows })
    }

    /// Rescales every row of non-negative weights to sum to one.
    pub fn normalized(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut out = Vec::with_capacity(rows.len());
        for (x, row) in rows.into_iter().enumerate() {
            let total: f64 = row.iter().sum();
            if !(total > 0.0 && total.is_finite()) {
                return Err(Error::Argument(format!("channel row {x} has no positive mass")));
            }
            out.push(row.into_iter().map(|w| w / total).collect());
        }
        Self::new(out)
    }

    /// Builds from a matrix indexed `[y][x]` whose columns are the
    /// conditionals, renormalizing each.
    pub fn from_column_stochastic(columns: &[Vec<f64>]) -> Result<Self> {
        let d2 = columns.len();
        let d1 = columns.first().map(Vec::len).unwrap_or(0);
        let rows = (0..d1).map(|x| (0..d2).map(|y| columns[y][x]).collect()).collect();
        Self::normalized(rows)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.rows[x][y]
    }

    pub fn input_size(&self) -> usize {
        self.rows.len()
    }

    pub fn output_size(&self) -> usize {
        self.rows[0].len()
    }
}

impl TryFrom<Vec<Vec<f64>>> for ConditionalDistribution {
    type Error = Error;
    fn try_from(v: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ConditionalDistribution> for Vec<Vec<f64>> {
    fn from(c: ConditionalDistribution) -> Self {
        c.rows
    }
}

/// Source `P_X`, distortion `R(x, y)` and target expected distortion `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdProblem {
    p_x: DiscreteDistribution,
    distortion: Vec<Vec<f64>>,
    level: f64,
}

impl RdProblem {
    pub fn new(p_x: DiscreteDistribution, distortion: Vec<Vec<f64>>, level: f64) -> Result<Self> {
        let d1 = p_x.len();
        if distortion.len() != d1 {
            return Err(Error::Argument(format!("distortion has {} rows but p_x has {d1} entries", distortion.len())));
        }
        let d2 = distortion[0].len();
        if let Some((x, row)) = distortion.iter().enumerate().find(|(_, r)| r.len() != d2) {
            return Err(Error::Argument(format!("distortion row {x} has length {}, expected {d2}", row.len())));
        }
        if d2 < 2 {
            return Err(Error::Argument("distortion needs at least 2 columns (reproduction symbols)".into()));
        }
        if distortion.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Argument("distortion entries must be finite".into()));
        }
        if p_x.probs().iter().any(|p| *p <= 0.0) {
            return Err(Error::Argument("p_x entries must be strictly positive".into()));
        }
        if !level.is_finite() {
            return Err(Error::Argument("c must be finite".into()));
        }
        let last = &distortion[d1 - 1];
        if (last[d2 - 1] - last[d2 - 2]).abs() <= 1e-12 {
            return Err(Error::Argument("distortion: the last two entries of the last row must differ".into()));
        }
        let problem = Self { p_x, distortion, level };
        let (lo, hi) = problem.feasible_range();
        if !(level > lo && level < hi) {
            return Err(Error::Argument(format!("c must lie strictly between {lo} and {hi}, got {level}")));
        }
        Ok(problem)
    }

    pub fn p_x(&self) -> &DiscreteDistribution {
        &self.p_x
    }

    pub fn distortion(&self) -> &[Vec<f64>] {
        &self.distortion
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn source_size(&self) -> usize {
        self.p_x.len()
    }

    pub fn reproduction_size(&self) -> usize {
        self.distortion[0].len()
    }

    /// `(Σ_x P_X(x) min_y R(x,y), Σ_x P_X(x) max_y R(x,y))`.
    pub fn feasible_range(&self) -> (f64, f64) {
        let mut lo = 0.0;
        let mut hi = 0.0;
        for (p, row) in self.p_x.probs().iter().zip(&self.distortion) {
            lo += p * row.iter().copied().fold(f64::INFINITY, f64::min);
            hi += p * row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        (lo, hi)
    }
}

/// A `d₁ × d₂` table over `𝒳 × 𝒴`, row-major. Entries may be negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl JointTable {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) || cols == 0 {
            return Err(Error::Argument("joint table rows must be non-empty and equally long".into()));
        }
        Ok(Self { rows: rows.len(), cols, values: rows.iter().flatten().copied().collect() })
    }

    pub(crate) fn from_flat(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), rows * cols);
        Self { rows, cols, values }
    }

    /// `W × P_X`.
    pub fn from_channel(p_x: &DiscreteDistribution, w: &ConditionalDistribution) -> Self {
        let rows = w.input_size();
        let cols = w.output_size();
        let values =
            (0..rows).flat_map(|x| (0..cols).map(move |y| (x, y))).map(|(x, y)| p_x.probs()[x] * w.get(x, y)).collect();
        Self { rows, cols, values }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.cols + y]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.values.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.values.chunks(self.cols) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out
    }

    pub fn min_entry(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `Σ_{x,y} P(x,y) R(x,y)`.
    pub fn expected(&self, r: &[Vec<f64>]) -> f64 {
        (0..self.rows).flat_map(|x| (0..self.cols).map(move |y| (x, y))).map(|(x, y)| self.get(x, y) * r[x][y]).sum()
    }

    /// The channel `P(x,y) / Σ_y P(x,y)`. Negative entries are an error.
    pub fn conditional(&self) -> Result<ConditionalDistribution> {
        if self.min_entry() < 0.0 {
            return Err(Error::Domain(format!("joint table has a negative entry {}", self.min_entry())));
        }
        ConditionalDistribution::normalized(self.to_rows())
    }
}

/// `I(X;Y)` in nats for input `P_X` and channel `W`, with `0 log 0 = 0`.
pub fn mutual_information(p_x: &DiscreteDistribution, w: &ConditionalDistribution) -> f64 {
    let p_y = output_distribution(p_x, w);
    let mut total = 0.0;
    for (x, px) in p_x.probs().iter().enumerate() {
        for (y, py) in p_y.iter().enumerate() {
            let wxy = w.get(x, y);
            if wxy > 0.0 && *px > 0.0 {
                total += px * wxy * (wxy / py).ln();
            }
        }
    }
    total
}

/// `Σ_x P_X(x) W(y|x)`.
pub fn output_distribution(p_x: &DiscreteDistribution, w: &ConditionalDistribution) -> Vec<f64> {
    let mut p_y = vec![0.0; w.output_size()];
    for (x, px) in p_x.probs().iter().enumerate() {
        for (y, py) in p_y.iter_mut().enumerate() {
            *py += px * w.get(x, y);
        }
    }
    p_y
}

/// `Σ_{x,y} P_X(x) W(y|x) R(x,y)`.
pub fn expected_distortion(p_x: &DiscreteDistribution, w: &ConditionalDistribution, r: &[Vec<f64>]) -> f64 {
    JointTable::from_channel(p_x, w).expected(r)
}

/// Product of the row marginal with the column marginal,
/// `P_X(x) · Σ_{x′} P(x′, y)`; affine, so negative entries pass through.
pub fn m_project_product(joint: &JointTable) -> JointTable {
    let p_x = joint.row_sums();
    let p_y = joint.column_sums();
    let (rows, cols) = joint.shape();
    let values = (0..rows).flat_map(|x| p_y.iter().map(move |py| (x, *py))).map(|(x, py)| p_x[x] * py).collect();
    JointTable::from_flat(rows, cols, values)
}

/// Solver output in rate-distortion terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdSolution {
    pub algorithm: String,
    pub objective: f64,
    pub mutual_information: f64,
    pub distortion: f64,
    pub w: ConditionalDistribution,
    pub joint: JointTable,
    /// Free mixture coordinates of the final joint table.
    pub eta: Vec<f64>,
    pub iterations: usize,
    pub cumulative_inner: usize,
    pub termination: Termination,
    pub trace: IterationTrace,
}

impl RdSolution {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        algorithm: &str,
        problem: &RdProblem,
        basis: &RdBasis,
        objective: f64,
        joint: JointTable,
        iterations: usize,
        cumulative_inner: usize,
        termination: Termination,
        mut trace: IterationTrace,
    ) -> Result<Self> {
        let w = match joint.conditional() {
            Ok(w) => w,
            Err(_) => {
                trace.warnings.push(format!(
                    "final joint table has negative mass (min {:e}); clipped to zero",
                    joint.min_entry()
                ));
                let clipped: Vec<Vec<f64>> =
                    joint.to_rows().into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
                ConditionalDistribution::normalized(clipped)?
            }
        };
        Ok(Self {
            algorithm: algorithm.to_string(),
            objective,
            mutual_information: mutual_information(problem.p_x(), &w),
            distortion: expected_distortion(problem.p_x(), &w, problem.distortion()),
            eta: basis.eta_of_joint(&joint),
            w,
            joint,
            iterations,
            cumulative_inner,
            termination,
            trace,
        })
    }
}
