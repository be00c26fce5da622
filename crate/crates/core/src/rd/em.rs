//! em baselines: alternate an m-step that tilts `P_Y` by the distortion
//! with the multiplier fixed by a one-dimensional convex problem, and an
//! e-step that takes the output marginal.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{build_rd_basis, ConditionalDistribution, DiscreteDistribution, JointTable, RdProblem, RdSolution};
use crate::error::{Error, Result};
use crate::newton::{self, SmoothConvex};
use crate::potentials::log_sum_exp;
use crate::solver::{IterationTrace, SolverConfig, Termination, TraceRow};

/// Value and first two derivatives of `F̂[P_Y](τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FHat {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// `F̂[P_Y](τ) = Σ_x P_X(x) log Σ_y P_Y(y) e^{τ(c − R(x,y))}`, with the
/// derivatives given by the tilted mean and variance of `c − R(x, ·)`.
pub fn f_hat(p_x: &DiscreteDistribution, p_y: &DiscreteDistribution, r: &[Vec<f64>], c: f64, tau: f64) -> FHat {
    f_hat_raw(p_x.probs(), p_y.probs(), r, c, tau)
}

fn f_hat_raw(p_x: &[f64], p_y: &[f64], r: &[Vec<f64>], c: f64, tau: f64) -> FHat {
    let mut out = FHat { value: 0.0, first: 0.0, second: 0.0 };
    let mut scores = vec![0.0; p_y.len()];
    for (px, row) in p_x.iter().zip(r) {
        for ((s, py), rxy) in scores.iter_mut().zip(p_y).zip(row) {
            *s = if *py > 0.0 { py.ln() + tau * (c - rxy) } else { f64::NEG_INFINITY };
        }
        let lse = log_sum_exp(&scores);
        let (mut m1, mut m2) = (0.0, 0.0);
        for (s, rxy) in scores.iter().zip(row) {
            let w = (s - lse).exp();
            let a = c - rxy;
            m1 += w * a;
            m2 += w * a * a;
        }
        out.value += px * lse;
        out.first += px * m1;
        out.second += px * (m2 - m1 * m1).max(0.0);
    }
    out
}

/// Inner Newton iteration counts for the inexact m-step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// `5 + t`.
    F1,
    /// `⌈5 + 3 ln t⌉`.
    F2,
    Constant(usize),
}

impl Schedule {
    /// Number of Newton updates at outer step `t ≥ 1`.
    pub fn count(&self, t: usize) -> usize {
        match self {
            Schedule::F1 => 5 + t,
            Schedule::F2 => (5.0 + 3.0 * (t as f64).ln()).ceil() as usize,
            Schedule::Constant(k) => *k,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Schedule::F1 => "f1".into(),
            Schedule::F2 => "f2".into(),
            Schedule::Constant(k) => format!("const{k}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmOptions {
    /// Starting output distribution; uniform when absent.
    pub initial_p_y: Option<DiscreteDistribution>,
    /// Inexact m-step schedule; the m-step is solved to tolerance when absent.
    pub schedule: Option<Schedule>,
}

struct TauProblem<'a> {
    p_x: &'a [f64],
    p_y: &'a [f64],
    r: &'a [Vec<f64>],
    c: f64,
}

impl SmoothConvex for TauProblem<'_> {
    fn value(&self, x: &[f64]) -> Option<f64> {
        let v = f_hat_raw(self.p_x, self.p_y, self.r, self.c, x[0]).value;
        v.is_finite().then_some(v)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![f_hat_raw(self.p_x, self.p_y, self.r, self.c, x[0]).first]
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, f_hat_raw(self.p_x, self.p_y, self.r, self.c, x[0]).second)
    }
}

fn exact_tau(problem: &RdProblem, p_y: &[f64], start: f64, config: &SolverConfig) -> Result<(f64, usize)> {
    let tau = TauProblem { p_x: problem.p_x().probs(), p_y, r: problem.distortion(), c: problem.level() };
    let out = newton::minimize(&tau, vec![start], &config.numeric, "m-step multiplier")?;
    Ok((out.x[0], out.iterations))
}

/// Exactly `steps` Newton updates from `τ = 0`, halving any update that
/// increases `F̂`.
fn scheduled_tau(problem: &RdProblem, p_y: &[f64], steps: usize, config: &SolverConfig) -> Result<f64> {
    let (p_x, r, c) = (problem.p_x().probs(), problem.distortion(), problem.level());
    let mut tau = 0.0;
    for k in 0..steps {
        let here = f_hat_raw(p_x, p_y, r, c, tau);
        if here.first == 0.0 {
            continue;
        }
        if !(here.second > 0.0 && here.second.is_finite()) {
            return Err(Error::Convergence { what: "m-step multiplier", iterations: k, residual: here.first.abs() });
        }
        let mut step = -here.first / here.second;
        let mut halvings = 0;
        while f_hat_raw(p_x, p_y, r, c, tau + step).value > here.value {
            step *= 0.5;
            halvings += 1;
            if halvings > config.numeric.max_halvings {
                return Err(Error::Convergence {
                    what: "m-step multiplier",
                    iterations: k,
                    residual: here.first.abs(),
                });
            }
        }
        tau += step;
    }
    Ok(tau)
}

/// `W(y|x) ∝ P_Y(y) e^{s R(x,y)}`.
fn tilt(p_y: &[f64], r: &[Vec<f64>], s: f64) -> Result<ConditionalDistribution> {
    let rows = r
        .iter()
        .map(|row| {
            let scores: Vec<f64> = p_y
                .iter()
                .zip(row)
                .map(|(py, rxy)| if *py > 0.0 { py.ln() + s * rxy } else { f64::NEG_INFINITY })
                .collect();
            let lse = log_sum_exp(&scores);
            scores.into_iter().map(|v| (v - lse).exp()).collect()
        })
        .collect();
    ConditionalDistribution::normalized(rows)
}

fn output_marginal(p_x: &[f64], w: &ConditionalDistribution) -> Vec<f64> {
    let mut p_y = vec![0.0; w.output_size()];
    for (x, px) in p_x.iter().enumerate() {
        p_y.iter_mut().zip(&w.rows()[x]).for_each(|(a, b)| *a += px * b);
    }
    p_y
}

/// Picks the exponent sign `σ ∈ {+1, −1}` whose tilt at the stationary
/// multiplier meets the distortion level more closely.
fn select_sign(problem: &RdProblem, p_y: &[f64], config: &SolverConfig) -> Result<f64> {
    let (tau, _) = exact_tau(problem, p_y, 0.0, config)?;
    let miss = |sigma: f64| -> Result<f64> {
        let w = tilt(p_y, problem.distortion(), sigma * tau)?;
        Ok((super::expected_distortion(problem.p_x(), &w, problem.distortion()) - problem.level()).abs())
    };
    Ok(if miss(1.0)? < miss(-1.0)? { 1.0 } else { -1.0 })
}

/// The channel `W ∝ P_Y e^{−τ̄R}` with `τ̄` the stationary multiplier of
/// `F̂[P_Y]`; it is strictly positive and meets the distortion level.
pub fn tilted_channel(
    problem: &RdProblem,
    p_y: &DiscreteDistribution,
    config: &SolverConfig,
) -> Result<ConditionalDistribution> {
    if p_y.len() != problem.reproduction_size() {
        return Err(Error::DimensionMismatch { expected: problem.reproduction_size(), found: p_y.len() });
    }
    let (tau, _) = exact_tau(problem, p_y.probs(), 0.0, config)?;
    tilt(p_y.probs(), problem.distortion(), -tau)
}

/// [`em_solve_with`] from a uniform `P_Y` with an exact m-step.
pub fn em_solve(problem: &RdProblem, config: &SolverConfig) -> Result<RdSolution> {
    em_solve_with(problem, config, &EmOptions::default())
}

/// [`em_solve_with`] from a uniform `P_Y` with `schedule(t)` Newton updates
/// per m-step.
pub fn em_solve_newton(problem: &RdProblem, config: &SolverConfig, schedule: Schedule) -> Result<RdSolution> {
    em_solve_with(problem, config, &EmOptions { initial_p_y: None, schedule: Some(schedule) })
}

pub fn em_solve_with(problem: &RdProblem, config: &SolverConfig, options: &EmOptions) -> Result<RdSolution> {
    config.validate()?;
    let d2 = problem.reproduction_size();
    let p_x = problem.p_x().probs();
    let r = problem.distortion();
    let mut p_y = match &options.initial_p_y {
        Some(p) if p.len() != d2 => return Err(Error::DimensionMismatch { expected: d2, found: p.len() }),
        Some(p) if p.probs().iter().any(|v| *v <= 0.0) => {
            return Err(Error::Argument("initial output distribution must be strictly positive".into()))
        }
        Some(p) => p.probs().to_vec(),
        None => vec![1.0 / d2 as f64; d2],
    };
    if let Some(s) = options.schedule {
        if s.count(1) == 0 {
            return Err(Error::Argument("schedule must request at least one Newton update".into()));
        }
    }
    let basis = build_rd_basis(problem)?;
    let start = Instant::now();
    let sigma = select_sign(problem, &p_y, config)?;
    let mut trace = IterationTrace::default();
    trace.notes.push(format!("m-step exponent sign {sigma:+}"));
    let name = match options.schedule {
        Some(s) => format!("em-newton-{}", s.label()),
        None => "em".to_string(),
    };

    let mut tau = 0.0;
    let mut cumulative = 0usize;
    let mut previous: Option<f64> = None;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut last: Option<(ConditionalDistribution, f64)> = None;
    for t in 1..=config.max_iterations {
        let step = match options.schedule {
            Some(s) => {
                let count = s.count(t);
                scheduled_tau(problem, &p_y, count, config).map(|tau| (tau, count))
            }
            None => exact_tau(problem, &p_y, tau, config),
        };
        let (next_tau, used) = match step {
            Ok(v) => v,
            Err(e) => {
                termination = Termination::Error(e.to_string());
                break;
            }
        };
        tau = next_tau;
        let w = tilt(&p_y, r, sigma * tau)?;
        let joint = JointTable::from_channel(problem.p_x(), &w);
        let mi = super::mutual_information(problem.p_x(), &w);
        let distortion = joint.expected(r);
        cumulative += used;
        iterations = t;
        let done = previous.is_some_and(|prev| (prev - mi).abs() / prev.abs().max(1.0) < config.objective_tolerance);
        if t == 1 || t % config.trace_every == 0 || done || t == config.max_iterations {
            trace.rows.push(TraceRow {
                iter: t,
                objective: mi,
                constraint_residual: (distortion - problem.level()).abs(),
                min_entry: Some(joint.min_entry()),
                cumulative_inner: cumulative,
                elapsed_ns: start.elapsed().as_nanos() as u64,
                point: p_y.clone(),
                gamma_check: None,
                surrogate: None,
            });
        }
        p_y = output_marginal(p_x, &w);
        previous = Some(mi);
        last = Some((w, mi));
        if done {
            termination = Termination::Tolerance;
            break;
        }
    }
    let (w, mi) = match last {
        Some(v) => v,
        None => return Err(Error::Convergence { what: "em", iterations: 0, residual: f64::NAN }),
    };
    let joint = JointTable::from_channel(problem.p_x(), &w);
    RdSolution::assemble(&name, problem, &basis, mi, joint, iterations, cumulative, termination, trace)
}
