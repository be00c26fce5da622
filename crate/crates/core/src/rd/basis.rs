//! Affine coordinates for joint tables meeting the source-marginal and
//! distortion constraints, the clipped objective, and the
//! minimization-free solver over the cell-indicator log-partition system.

use serde::{Deserialize, Serialize};

use super::{JointTable, RdProblem, RdSolution};
use crate::bregman::{e_project, MixtureFamily, NaturalPoint};
use crate::error::{ensure_len, Error, Result};
use crate::potentials::{make_log_partition_system, FeatureBasis, LogPartitionSystem};
use crate::solver::{ab_solve, mirror_solve, MixtureForm, MixtureObjective, SolveResult, SolverConfig};

/// Free cells, dual tables `gʲ` and the offset table, all flattened
/// row-major over `𝒳 × 𝒴`.
///
/// Every joint table with row marginal `P_X` and expected distortion `c`
/// is `Σ_j η_j gʲ + base`, where `η_j` is its mass on free cell `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdBasis {
    d1: usize,
    d2: usize,
    cells: Vec<(usize, usize)>,
    g: Vec<Vec<f64>>,
    base: Vec<f64>,
}

impl RdBasis {
    /// `d₀ = d₁(d₂ − 1) − 1`.
    pub fn free_count(&self) -> usize {
        self.cells.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    /// Free cells `(x, y)`, in coordinate order.
    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    /// `gʲ` as flattened tables.
    pub fn duals(&self) -> &[Vec<f64>] {
        &self.g
    }

    /// `fⱼ`, the indicator of free cell `j`, as flattened tables.
    pub fn features(&self) -> Vec<Vec<f64>> {
        self.cells
            .iter()
            .map(|&(x, y)| {
                let mut f = vec![0.0; self.d1 * self.d2];
                f[x * self.d2 + y] = 1.0;
                f
            })
            .collect()
    }

    pub fn offset(&self) -> &[f64] {
        &self.base
    }

    /// Mass on each free cell.
    pub fn eta_of_joint(&self, joint: &JointTable) -> Vec<f64> {
        self.cells.iter().map(|&(x, y)| joint.get(x, y)).collect()
    }

    fn flat_joint(&self, eta: &[f64]) -> Vec<f64> {
        let mut p = self.base.clone();
        for (e, g) in eta.iter().zip(&self.g) {
            p.iter_mut().zip(g).for_each(|(pi, gi)| *pi += e * gi);
        }
        p
    }
}

pub fn build_rd_basis(problem: &RdProblem) -> Result<RdBasis> {
    let d1 = problem.source_size();
    let d2 = problem.reproduction_size();
    let r = problem.distortion();
    let (lx, ly, ly2) = (d1 - 1, d2 - 1, d2 - 2);
    let den = r[lx][ly2] - r[lx][ly];
    if den.abs() <= 1e-12 {
        return Err(Error::Argument("distortion: the last two entries of the last row must differ".into()));
    }
    let n = d1 * d2;
    let idx = |x: usize, y: usize| x * d2 + y;
    let cells: Vec<(usize, usize)> =
        (0..lx).flat_map(|x| (0..ly).map(move |y| (x, y))).chain((0..ly2).map(|y| (lx, y))).collect();
    let g = cells
        .iter()
        .map(|&(x, y)| {
            let mut t = vec![0.0; n];
            t[idx(x, y)] += 1.0;
            t[idx(x, ly)] -= 1.0;
            let ratio = (r[x][y] - r[x][ly]) / den;
            t[idx(lx, ly2)] -= ratio;
            t[idx(lx, ly)] += ratio;
            t
        })
        .collect();
    let p_x = problem.p_x().probs();
    let k = (problem.level() - p_x.iter().zip(r).map(|(p, row)| p * row[ly]).sum::<f64>()) / den;
    let mut base = vec![0.0; n];
    for (x, p) in p_x.iter().enumerate() {
        base[idx(x, ly)] = *p;
    }
    base[idx(lx, ly2)] += k;
    base[idx(lx, ly)] -= k;
    Ok(RdBasis { d1, d2, cells, g, base })
}

fn check_basis(problem: &RdProblem, basis: &RdBasis, eta: &[f64]) -> Result<()> {
    if basis.shape() != (problem.source_size(), problem.reproduction_size()) {
        return Err(Error::Argument("basis was built for a different problem shape".into()));
    }
    ensure_len(basis.free_count(), eta.len())
}

/// `P_η = Σ_j η_j gʲ + base`.
pub fn joint_from_eta(problem: &RdProblem, basis: &RdBasis, eta: &[f64]) -> Result<JointTable> {
    check_basis(problem, basis, eta)?;
    Ok(JointTable::from_flat(basis.d1, basis.d2, basis.flat_joint(eta)))
}

fn clipped_ln(v: f64, eps: f64) -> f64 {
    v.max(eps).ln()
}

/// `log(P_η)₊ − log P_X − log(P_Y)₊` per cell, plus the two tables.
fn log_ratios(problem: &RdProblem, basis: &RdBasis, eps: f64, eta: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (d1, d2) = basis.shape();
    let p = basis.flat_joint(eta);
    let mut p_y = vec![0.0; d2];
    for row in p.chunks(d2) {
        p_y.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    let p_x = problem.p_x().probs();
    let mut l = vec![0.0; d1 * d2];
    for x in 0..d1 {
        for y in 0..d2 {
            l[x * d2 + y] = clipped_ln(p[x * d2 + y], eps) - p_x[x].ln() - clipped_ln(p_y[y], eps);
        }
    }
    (l, p, p_y)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("epsilon must be positive, got {eps}")))
    }
}

/// `Σ P_η log(P_η)₊ − Σ P_X log P_X − Σ_y P_Y log(P_Y)₊` with
/// `(v)₊ = max(v, ε)`.
pub fn rd_objective(problem: &RdProblem, basis: &RdBasis, eps: f64, eta: &[f64]) -> Result<f64> {
    check_basis(problem, basis, eta)?;
    check_eps(eps)?;
    let p = basis.flat_joint(eta);
    let (_, d2) = basis.shape();
    let mut p_y = vec![0.0; d2];
    for row in p.chunks(d2) {
        p_y.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    let joint: f64 = p.iter().map(|v| v * clipped_ln(*v, eps)).sum();
    let source: f64 = problem.p_x().probs().iter().map(|v| v * v.ln()).sum();
    let output: f64 = p_y.iter().map(|v| v * clipped_ln(*v, eps)).sum();
    Ok(joint - source - output)
}

/// Clipped gradient components: one per free coordinate, and the
/// component paired with the normalization coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdOmega {
    pub free: Vec<f64>,
    pub last: f64,
}

/// `Ω̄ʲ = Σ gʲ L` and `Ω̄^{d₀+1} = Σ base · L` with
/// `L = log(P_η)₊ − log P_X − log(P_Y)₊`. Their pairing with `(η, 1)`
/// reproduces the clipped objective.
pub fn rd_omega(problem: &RdProblem, basis: &RdBasis, eps: f64, eta: &[f64]) -> Result<RdOmega> {
    check_basis(problem, basis, eta)?;
    check_eps(eps)?;
    let (l, _, _) = log_ratios(problem, basis, eps, eta);
    let pair = |t: &[f64]| t.iter().zip(&l).map(|(a, b)| a * b).sum::<f64>();
    Ok(RdOmega { free: basis.g.iter().map(|g| pair(g)).collect(), last: pair(&basis.base) })
}

/// The clipped rate-distortion objective as a mixture-coordinate map on
/// the `d₀ + 1` coordinates of the cell-indicator log-partition system.
#[derive(Debug, Clone)]
pub struct RdForm {
    problem: RdProblem,
    basis: RdBasis,
    eps: f64,
}

impl RdForm {
    pub fn new(problem: &RdProblem, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        Ok(Self { basis: build_rd_basis(problem)?, problem: problem.clone(), eps })
    }

    pub fn basis(&self) -> &RdBasis {
        &self.basis
    }

    /// The log-partition system over all cells with the free-cell
    /// indicators as features.
    pub fn system(&self) -> Result<LogPartitionSystem> {
        let (d1, d2) = self.basis.shape();
        make_log_partition_system(FeatureBasis::from_rows(d1 * d2, &self.basis.features())?)
    }
}

impl MixtureForm for RdForm {
    fn dim(&self) -> usize {
        self.basis.free_count() + 1
    }

    fn omega_tilde(&self, eta: &[f64]) -> Vec<f64> {
        let d0 = self.basis.free_count();
        let (l, _, _) = log_ratios(&self.problem, &self.basis, self.eps, &eta[..d0]);
        let pair = |t: &[f64]| t.iter().zip(&l).map(|(a, b)| a * b).sum::<f64>();
        let mut out: Vec<f64> = self.basis.g.iter().map(|g| pair(g)).collect();
        out.push(pair(&self.basis.base));
        out
    }

    fn min_entry(&self, eta: &[f64]) -> Option<f64> {
        let d0 = self.basis.free_count();
        Some(self.basis.flat_joint(&eta[..d0]).into_iter().fold(f64::INFINITY, f64::min))
    }
}

/// Free natural coordinates of the cell-indicator log-partition system
/// whose distribution puts mass `η_j` on free cell `j` and spreads the rest
/// evenly over the remaining cells. Requires `η_j > 0` and `Σ η_j < 1`.
pub fn natural_of_free_masses(basis: &RdBasis, eta: &[f64]) -> Result<Vec<f64>> {
    ensure_len(basis.free_count(), eta.len())?;
    let (d1, d2) = basis.shape();
    let rest = 1.0 - eta.iter().sum::<f64>();
    if eta.iter().any(|e| e.is_nan() || *e <= 0.0) || rest.is_nan() || rest <= 0.0 {
        return Err(Error::Domain("free cell masses must be positive with total below 1".into()));
    }
    let spread = (rest / (d1 * d2 - eta.len()) as f64).ln();
    Ok(eta.iter().map(|e| e.ln() - spread).collect())
}

/// A strictly feasible starting point: the free natural coordinates of the
/// tilted channel from a uniform output distribution.
pub fn interior_start(problem: &RdProblem) -> Result<Vec<f64>> {
    let basis = build_rd_basis(problem)?;
    let uniform = super::DiscreteDistribution::uniform(problem.reproduction_size())?;
    let w = super::em::tilted_channel(problem, &uniform, &SolverConfig::default())?;
    natural_of_free_masses(&basis, &basis.eta_of_joint(&JointTable::from_channel(problem.p_x(), &w)))
}

type Driver = fn(
    &LogPartitionSystem,
    &MixtureFamily,
    &MixtureObjective<&LogPartitionSystem, RdForm>,
    &SolverConfig,
    &NaturalPoint,
) -> Result<SolveResult>;

fn solve_on_cells(
    name: &str,
    driver: Driver,
    problem: &RdProblem,
    config: &SolverConfig,
    eps: f64,
    theta_init: &[f64],
) -> Result<RdSolution> {
    let form = RdForm::new(problem, eps)?;
    let basis = form.basis().clone();
    let d0 = basis.free_count();
    ensure_len(d0, theta_init.len())?;
    let system = form.system()?;
    let family = MixtureFamily::new(d0, vec![1.0])?;
    let objective = MixtureObjective::new(&system, form)?;
    let mut start = theta_init.to_vec();
    start.push(0.0);
    let start = e_project(&system, &family, &NaturalPoint(start))?;
    let result = driver(&system, &family, &objective, config, &start)?;
    let joint = joint_from_eta(problem, &basis, &result.mixture[..d0])?;
    RdSolution::assemble(
        name,
        problem,
        &basis,
        result.objective,
        joint,
        result.iterations,
        result.cumulative_inner,
        result.termination,
        result.trace,
    )
}

/// Minimization-free iteration: the generic update with the closed-form
/// log-partition projection. `theta_init` holds the `d₀` free natural
/// coordinates; the normalization coordinate is filled in by projection.
pub fn rd_solve_minfree(
    problem: &RdProblem,
    config: &SolverConfig,
    eps: f64,
    theta_init: &[f64],
) -> Result<RdSolution> {
    solve_on_cells("minfree", |s, f, o, c, t| ab_solve(s, f, o, c, t), problem, config, eps, theta_init)
}

/// Mirror descent with `β = 1/γ` on the same system, with every step
/// solved by the generic inner Newton minimization.
pub fn rd_solve_mirror(problem: &RdProblem, config: &SolverConfig, eps: f64, theta_init: &[f64]) -> Result<RdSolution> {
    solve_on_cells("mirror", |s, f, o, c, t| mirror_solve(s, f, o, c, t), problem, config, eps, theta_init)
}
