//! The Bregman Arimoto-Blahut iteration `θ ← Γ(θ − Ω(θ)/γ)`, the
//! mirror-descent step it coincides with, and the diagnostics used to
//! certify descent along a run.

use std::cell::RefCell;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bregman::{
    divergence_unchecked, e_project_counted, mixture_to_natural_counted, ConvexPotential, MixtureFamily, MixturePoint,
    NaturalPoint,
};
use crate::error::{ensure_len, Error, Result};
use crate::newton::{self, SmoothConvex};
use crate::settings::NumericSettings;

/// A map `Ω` whose pairing with the mixture coordinates is the objective
/// `𝒢(θ) = Σ_j η_j(θ) Ωʲ(θ)`.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    /// `Ω(θ)`.
    fn omega(&self, theta: &[f64]) -> Vec<f64>;

    /// `Ω̃(η)`, when the objective is naturally expressed in mixture coordinates.
    fn omega_mixture(&self, _eta: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Smallest entry of the distribution represented by `θ`, for objectives
    /// where that is meaningful.
    fn min_entry(&self, _theta: &[f64]) -> Option<f64> {
        None
    }
}

/// An objective given by `Ω̃(η)`.
pub trait MixtureForm: Send + Sync {
    fn dim(&self) -> usize;

    fn omega_tilde(&self, eta: &[f64]) -> Vec<f64>;

    fn min_entry(&self, _eta: &[f64]) -> Option<f64> {
        None
    }
}

/// Lifts a [`MixtureForm`] to natural coordinates: `Ω(θ) = Ω̃(∇φ(θ))`.
#[derive(Debug, Clone)]
pub struct MixtureObjective<P, M> {
    system: P,
    form: M,
}

impl<P: ConvexPotential, M: MixtureForm> MixtureObjective<P, M> {
    pub fn new(system: P, form: M) -> Result<Self> {
        ensure_len(system.dim(), form.dim())?;
        Ok(Self { system, form })
    }

    pub fn form(&self) -> &M {
        &self.form
    }

    pub fn system(&self) -> &P {
        &self.system
    }
}

impl<P: ConvexPotential, M: MixtureForm> Objective for MixtureObjective<P, M> {
    fn dim(&self) -> usize {
        self.form.dim()
    }

    fn omega(&self, theta: &[f64]) -> Vec<f64> {
        self.form.omega_tilde(&self.system.gradient(theta))
    }

    fn omega_mixture(&self, eta: &[f64]) -> Option<Vec<f64>> {
        Some(self.form.omega_tilde(eta))
    }

    fn min_entry(&self, theta: &[f64]) -> Option<f64> {
        self.form.min_entry(&self.system.gradient(theta))
    }
}

/// `𝒢̃(η) = ½ (η − b)ᵀ Q (η − b)` with `Q` positive semidefinite.
///
/// Free components of `Ω̃` are the partial derivatives; the last component
/// carries the remainder `(𝒢̃ − Σ_{j<d} η_j ∂_j𝒢̃) / η_d`, so the last mixture
/// coordinate must stay away from zero.
#[derive(Debug, Clone)]
pub struct QuadraticMixtureForm {
    q: DMatrix<f64>,
    b: Vec<f64>,
}

impl QuadraticMixtureForm {
    pub fn new(q: DMatrix<f64>, b: Vec<f64>) -> Result<Self> {
        if !q.is_square() || q.nrows() != b.len() || b.is_empty() {
            return Err(Error::Argument("Q must be square and match b".into()));
        }
        let sym = (&q + q.transpose()) * 0.5;
        let min_eig = sym.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-12 * sym.abs().max().max(1.0) {
            return Err(Error::Argument("Q is not positive semidefinite".into()));
        }
        Ok(Self { q: sym, b })
    }

    pub fn value(&self, eta: &[f64]) -> f64 {
        let r = nalgebra::DVector::from_iterator(eta.len(), eta.iter().zip(&self.b).map(|(e, b)| e - b));
        0.5 * r.dot(&(&self.q * &r))
    }

    pub fn gradient(&self, eta: &[f64]) -> Vec<f64> {
        let r = nalgebra::DVector::from_iterator(eta.len(), eta.iter().zip(&self.b).map(|(e, b)| e - b));
        (&self.q * r).as_slice().to_vec()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn center(&self) -> &[f64] {
        &self.b
    }
}

impl MixtureForm for QuadraticMixtureForm {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn omega_tilde(&self, eta: &[f64]) -> Vec<f64> {
        let d = eta.len();
        let mut omega = self.gradient(eta);
        let paired: f64 = eta[..d - 1].iter().zip(&omega[..d - 1]).map(|(e, o)| e * o).sum();
        omega[d - 1] = (self.value(eta) - paired) / eta[d - 1];
        omega
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub gamma: f64,
    pub max_iterations: usize,
    /// Stop when `|𝒢_t − 𝒢_{t+1}| / max(1, |𝒢_t|)` falls below this.
    pub objective_tolerance: f64,
    /// Record every `trace_every`-th step (the first and last are always kept).
    pub trace_every: usize,
    #[serde(skip)]
    pub numeric: NumericSettings,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma: 50.0,
            max_iterations: 10_000,
            objective_tolerance: 1e-10,
            trace_every: 1,
            numeric: NumericSettings::default(),
        }
    }
}

impl SolverConfig {
    pub fn with_gamma(gamma: f64) -> Self {
        Self { gamma, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Argument(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Argument("max_iterations must be at least 1".into()));
        }
        if self.objective_tolerance.is_nan() || self.objective_tolerance < 0.0 {
            return Err(Error::Argument("objective_tolerance must be non-negative".into()));
        }
        if self.trace_every == 0 {
            return Err(Error::Argument("trace_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// One recorded step. Row `t` describes the iterate after `t` updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub constraint_residual: f64,
    pub min_entry: Option<f64>,
    pub cumulative_inner: usize,
    pub elapsed_ns: u64,
    pub point: Vec<f64>,
    /// `D_Ω(θₜ‖θₜ₋₁) ≤ γ D^φ(θₜ‖θₜ₋₁)` for the step that produced this row.
    pub gamma_check: Option<bool>,
    /// `J_γ(θₜ, θₜ₋₁)` for the step that produced this row.
    pub surrogate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub rows: Vec<TraceRow>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

impl IterationTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Tolerance,
    MaxIterations,
    Error(String),
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::Tolerance => "tolerance",
            Termination::MaxIterations => "max-iter",
            Termination::Error(_) => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub natural: NaturalPoint,
    pub mixture: MixturePoint,
    pub objective: f64,
    pub iterations: usize,
    pub cumulative_inner: usize,
    pub termination: Termination,
    pub trace: IterationTrace,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `𝒢(θ) = Σ_j η_j(θ) Ωʲ(θ)`.
pub fn objective_value<P, O>(system: &P, objective: &O, theta: &[f64]) -> f64
where
    P: ConvexPotential + ?Sized,
    O: Objective + ?Sized,
{
    dot(&system.gradient(theta), &objective.omega(theta))
}

/// `ℱ_γ(θ) = θ − Ω(θ)/γ`.
pub fn f_gamma<O: Objective + ?Sized>(objective: &O, gamma: f64, theta: &NaturalPoint) -> Result<NaturalPoint> {
    ensure_len(objective.dim(), theta.len())?;
    let omega = objective.omega(theta);
    Ok(NaturalPoint(theta.iter().zip(&omega).map(|(t, o)| t - o / gamma).collect()))
}

/// One update `Γ(ℱ_γ(θ))`.
pub fn ab_step<P, O>(
    system: &P,
    family: &MixtureFamily,
    objective: &O,
    gamma: f64,
    theta: &NaturalPoint,
) -> Result<NaturalPoint>
where
    P: ConvexPotential + ?Sized,
    O: Objective + ?Sized,
{
    let bar = f_gamma(objective, gamma, theta)?;
    Ok(e_project_counted(system, family, &bar, &NumericSettings::default())?.0)
}

/// `J_γ(θ, θ′) = γ D^φ(θ‖θ′) + Σ_j η_j(θ) Ωʲ(θ′)`.
pub fn extended_objective<P, O>(
    system: &P,
    objective: &O,
    gamma: f64,
    theta: &NaturalPoint,
    theta_prime: &NaturalPoint,
) -> Result<f64>
where
    P: ConvexPotential + ?Sized,
    O: Objective + ?Sized,
{
    let d = crate::bregman::bregman_divergence(system, theta, theta_prime)?;
    Ok(gamma * d + dot(&system.gradient(theta), &objective.omega(theta_prime)))
}

/// `D_Ω(θ‖θ′) = Σ_j η_j(θ) (Ωʲ(θ) − Ωʲ(θ′))`.
pub fn d_omega<P, O>(system: &P, objective: &O, theta: &NaturalPoint, theta_prime: &NaturalPoint) -> Result<f64>
where
    P: ConvexPotential + ?Sized,
    O: Objective + ?Sized,
{
    ensure_len(system.dim(), theta.len())?;
    ensure_len(system.dim(), theta_prime.len())?;
    let a = objective.omega(theta);
    let b = objective.omega(theta_prime);
    let eta = system.gradient(theta);
    Ok(eta.iter().zip(a.iter().zip(&b)).map(|(e, (x, y))| e * (x - y)).sum())
}

/// Sampled estimate of the smallest admissible `γ`: the largest ratio
/// `D_Ω(θ‖θ′) / D^φ(θ‖θ′)` over the pairs, times 1.2, floored at zero.
pub fn estimate_gamma<P, O>(system: &P, objective: &O, samples: &[(NaturalPoint, NaturalPoint)]) -> Result<f64>
where
    P: ConvexPotential + ?Sized,
    O: Objective + ?Sized,
{
    let mut best: Option<f64> = None;
    for (a, b) in samples {
        let div = crate::bregman::bregman_divergence(system, a, b)?;
        if div < 1e-12 {
            continue;
        }
        let ratio = d_omega(system, objective, a, b)? / div;
        best = Some(best.map_or(ratio, |m: f64| m.max(ratio)));
    }
    best.map(|m| 1.2 * m.max(0.0)).ok_or_else(|| Error::Argument("every sampled pair has vanishing divergence".into()))
}

struct MirrorReduction<'a, P: ?Sized> {
    system: &'a P,
    constants: &'a [f64],
    gradient: &'a [f64],
    theta: &'a [f64],
    eta: &'a [f64],
    dual_at_eta: f64,
    beta: f64,
    settings: &'a NumericSettings,
    cache: RefCell<Option<(Vec<f64>, Vec<f64>)>>,
    inner: RefCell<usize>,
}

impl<P: ConvexPotential + ?Sized> MirrorReduction<'_, P> {
    fn full_eta(&self, x: &[f64]) -> Vec<f64> {
        let mut e = x.to_vec();
        e.extend_from_slice(self.constants);
        e
    }

    fn theta_of(&self, x: &[f64]) -> Option<Vec<f64>> {
        if let Some((cx, ct)) = self.cache.borrow().as_ref() {
            if cx.as_slice() == x {
                return Some(ct.clone());
            }
        }
        let warm = self
            .cache
            .borrow()
            .as_ref()
            .map(|(_, t)| NaturalPoint(t.clone()))
            .unwrap_or_else(|| NaturalPoint(self.theta.to_vec()));
        let eta = MixturePoint(self.full_eta(x));
        let (theta, used) = mixture_to_natural_counted(self.system, &eta, Some(&warm), self.settings).ok()?;
        if !self.system.in_domain(&theta) {
            return None;
        }
        *self.inner.borrow_mut() += used;
        *self.cache.borrow_mut() = Some((x.to_vec(), theta.0.clone()));
        Some(theta.0)
    }
}

impl<P: ConvexPotential + ?Sized> SmoothConvex for MirrorReduction<'_, P> {
    fn value(&self, x: &[f64]) -> Option<f64> {
        let theta = self.theta_of(x)?;
        let eta = self.full_eta(x);
        let dual = dot(&eta, &theta) - self.system.value(&theta);
        // D^φ(θ(η′)‖θ(η)) = φ*(η′) − φ*(η) − ⟨θ(η), η′ − η⟩
        let shift: f64 = self.theta.iter().zip(eta.iter().zip(self.eta)).map(|(t, (a, b))| t * (a - b)).sum();
        let div = dual - self.dual_at_eta - shift;
        let v = dot(self.gradient, x) + div / self.beta;
        v.is_finite().then_some(v)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let theta = self.theta_of(x).unwrap_or_else(|| vec![f64::NAN; self.theta.len()]);
        self.gradient.iter().zip(theta.iter().zip(self.theta)).map(|(g, (t, t0))| g + (t - t0) / self.beta).collect()
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d0 = x.len();
        let theta = self.theta_of(x).unwrap_or_else(|| self.theta.to_vec());
        let h = self.system.hessian(&theta);
        let inv = h
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| h.try_inverse())
            .unwrap_or_else(|| DMatrix::identity(theta.len(), theta.len()));
        inv.view((0, 0), (d0, d0)).into_owned() / self.beta
    }
}

pub(crate) struct MirrorOutcome {
    pub eta: MixturePoint,
    pub theta: NaturalPoint,
    pub inner: usize,
}

/// Mirror step from a family member given in natural coordinates.
pub(crate) fn mirror_step_from<P, O>(
    system: &P,
    family: &MixtureFamily,
    objective: &O,
    beta: f64,
    theta: &NaturalPoint,
    settings: &NumericSettings,
) -> Result<MirrorOutcome>
where
    P: ConvexPotential + ?Sized,
    O: Objective + ?Sized,
{
    let d0 = family.free_count();
    let eta = system.gradient(theta);
    let omega = objective.omega(theta);
    let dual_at_eta = dot(&eta, theta) - system.value(theta);
    let reduction = MirrorReduction {
        system,
        constants: family.constants(),
        gradient: &omega[..d0],
        theta,
        eta: &eta,
        dual_at_eta,
        beta,
        settings,
        cache: RefCell::new(Some((eta[..d0].to_vec(), theta.0.clone()))),
        inner: RefCell::new(0),
    };
    let out = newton::minimize(&reduction, eta[..d0].to_vec(), settings, "mirror step")?;
    let theta_next =
        reduction.theta_of(&out.x).ok_or_else(|| Error::Domain("mirror step left the dual domain".into()))?;
    let inner = out.iterations + *reduction.inner.borrow();
    Ok(MirrorOutcome { eta: MixturePoint(reduction.full_eta(&out.x)), theta: NaturalPoint(theta_next), inner })
}

/// `argmin_{η′ ∈ Ξ_ℳ} Σ_j η′_j ∂𝒢̃/∂η_j(η) + D^φ(θ(η′)‖θ(η))/β`, solved by
/// Newton over the free mixture coordinates with every `θ(η′)` obtained by
/// Legendre inversion. The gradient of `𝒢̃` on the family is read off the
/// free components of `Ω`.
pub fn mirror_step<P, O>(
    system: &P,
    family: &MixtureFamily,
    objective: &O,
    beta: f64,
    eta: &MixturePoint,
) -> Result<MixturePoint>
where
    P: ConvexPotential + ?Sized,
    O: Objective + ?Sized,
{
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Argument(format!("beta must be positive, got {beta}")));
    }
    ensure_len(system.dim(), family.dim()).map_err(|_| Error::Argument("family dimension mismatch".into()))?;
    let settings = NumericSettings::default();
    let (theta, _) = mixture_to_natural_counted(system, eta, None, &settings)?;
    Ok(mirror_step_from(system, family, objective, beta, &theta, &settings)?.eta)
}

fn check_family<P: ConvexPotential + ?Sized, O: Objective + ?Sized>(
    system: &P,
    family: &MixtureFamily,
    objective: &O,
    config: &SolverConfig,
    theta_init: &NaturalPoint,
) -> Result<()> {
    config.validate()?;
    if family.dim() != system.dim() {
        return Err(Error::Argument(format!(
            "family of dimension {} used with a {}-dimensional potential",
            family.dim(),
            system.dim()
        )));
    }
    ensure_len(system.dim(), objective.dim())?;
    ensure_len(system.dim(), theta_init.len())?;
    if !system.in_domain(theta_init) {
        return Err(Error::Domain(format!("initial point {:?}", theta_init.0)));
    }
    let residual = family.residual(system, theta_init);
    if residual > config.numeric.membership_tolerance {
        return Err(Error::Argument(format!("initial point is not in the mixture family (residual {residual:e})")));
    }
    Ok(())
}

struct StepOutput {
    theta: NaturalPoint,
    inner: usize,
}

fn drive<P, O, S>(
    system: &P,
    family: &MixtureFamily,
    objective: &O,
    config: &SolverConfig,
    theta_init: &NaturalPoint,
    mut step: S,
) -> Result<SolveResult>
where
    P: ConvexPotential + ?Sized,
    O: Objective + ?Sized,
    S: FnMut(&NaturalPoint, &[f64]) -> Result<StepOutput>,
{
    check_family(system, family, objective, config, theta_init)?;
    let start = Instant::now();
    let gamma = config.gamma;
    let mut theta = theta_init.clone();
    let mut eta = system.gradient(&theta);
    let mut omega = objective.omega(&theta);
    let mut value = dot(&eta, &omega);
    let mut trace = IterationTrace::default();
    let mut cumulative = 0usize;
    let mut failures = 0usize;
    trace.rows.push(TraceRow {
        iter: 0,
        objective: value,
        constraint_residual: family.residual(system, &theta),
        min_entry: objective.min_entry(&theta),
        cumulative_inner: 0,
        elapsed_ns: start.elapsed().as_nanos() as u64,
        point: theta.0.clone(),
        gamma_check: None,
        surrogate: None,
    });
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    for t in 1..=config.max_iterations {
        let next = match step(&theta, &omega) {
            Ok(out) => out,
            Err(e) => {
                termination = Termination::Error(e.to_string());
                break;
            }
        };
        let eta_next = system.gradient(&next.theta);
        let omega_next = objective.omega(&next.theta);
        let value_next = dot(&eta_next, &omega_next);
        if !value_next.is_finite() {
            termination = Termination::Error(format!("objective became non-finite at step {t}"));
            break;
        }
        let div = divergence_unchecked(system, &next.theta, &theta);
        let d_om: f64 = eta_next.iter().zip(omega_next.iter().zip(&omega)).map(|(e, (a, b))| e * (a - b)).sum();
        let surrogate = gamma * div + dot(&eta_next, &omega);
        // Slack absorbs rounding once steps have shrunk to noise level.
        let check = d_om <= gamma * div + 1e-12 * (1.0 + value.abs());
        if !check {
            failures += 1;
            if failures <= 10 {
                trace.warnings.push(format!("gamma condition check failed at step {t}"));
            }
        }
        cumulative += 1 + next.inner;
        iterations = t;
        let decrease = (value - value_next).abs() / value.abs().max(1.0);
        let done = decrease < config.objective_tolerance;
        if t % config.trace_every == 0 || done || t == config.max_iterations {
            trace.rows.push(TraceRow {
                iter: t,
                objective: value_next,
                constraint_residual: family.residual(system, &next.theta),
                min_entry: objective.min_entry(&next.theta),
                cumulative_inner: cumulative,
                elapsed_ns: start.elapsed().as_nanos() as u64,
                point: next.theta.0.clone(),
                gamma_check: Some(check),
                surrogate: Some(surrogate),
            });
        }
        theta = next.theta;
        eta = eta_next;
        omega = omega_next;
        value = value_next;
        if done {
            termination = Termination::Tolerance;
            break;
        }
    }
    if failures > 10 {
        trace.warnings.push(format!("gamma condition check failed at {failures} steps in total"));
    }
    Ok(SolveResult {
        mixture: MixturePoint(eta),
        natural: theta,
        objective: value,
        iterations,
        cumulative_inner: cumulative,
        termination,
        trace,
    })
}

/// Iterates [`ab_step`] from a family member.
pub fn ab_solve<P, O>(
    system: &P,
    family: &MixtureFamily,
    objective: &O,
    config: &SolverConfig,
    theta_init: &NaturalPoint,
) -> Result<SolveResult>
where
    P: ConvexPotential + ?Sized,
    O: Objective + ?Sized,
{
    let gamma = config.gamma;
    let settings = config.numeric;
    drive(system, family, objective, config, theta_init, |theta, omega| {
        let bar = NaturalPoint(theta.iter().zip(omega).map(|(t, o)| t - o / gamma).collect());
        let (theta, inner) = e_project_counted(system, family, &bar, &settings)?;
        Ok(StepOutput { theta, inner })
    })
}

/// Iterates [`mirror_step`] with `β = 1/γ`.
pub fn mirror_solve<P, O>(
    system: &P,
    family: &MixtureFamily,
    objective: &O,
    config: &SolverConfig,
    theta_init: &NaturalPoint,
) -> Result<SolveResult>
where
    P: ConvexPotential + ?Sized,
    O: Objective + ?Sized,
{
    let beta = 1.0 / config.gamma;
    let settings = config.numeric;
    drive(system, family, objective, config, theta_init, |theta, _| {
        let out = mirror_step_from(system, family, objective, beta, theta, &settings)?;
        Ok(StepOutput { theta: out.theta, inner: out.inner })
    })
}
