//! Bregman divergence systems.
//!
//! A strictly convex potential `φ` on an open set `Θ ⊂ R^d` induces two
//! coordinate systems: natural coordinates `θ` and mixture coordinates
//! `η = ∇φ(θ)`. The Legendre transform `φ*` inverts the map, and the
//! divergence `D^φ(θ₁‖θ₂) = ⟨∇φ(θ₁), θ₁ − θ₂⟩ − φ(θ₁) + φ(θ₂)` is the
//! basic quantity every solver in this crate is built on.
//!
//! Mixture families are always in canonical form: the last `k` mixture
//! coordinates are pinned to constants `c`. The e-projection onto such a
//! family keeps the first `d₀ = d − k` natural coordinates and solves for
//! the remaining `k`; potentials that know a closed form for that solve
//! advertise it through [`ConvexPotential::constrained_solution`].

use std::ops::Deref;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::newton::{self, SmoothConvex};
use crate::settings::NumericSettings;

macro_rules! coordinate_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn new(coords: Vec<f64>) -> Self {
                Self(coords)
            }

            pub fn zeros(dim: usize) -> Self {
                Self(vec![0.0; dim])
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }

        impl From<&[f64]> for $name {
            fn from(v: &[f64]) -> Self {
                Self(v.to_vec())
            }
        }
    };
}

coordinate_newtype!(
    /// A point in natural coordinates `θ`.
    NaturalPoint
);
coordinate_newtype!(
    /// A point in mixture coordinates `η = ∇φ(θ)`.
    MixturePoint
);

/// A strictly convex C² potential defining a Bregman system.
///
/// Only `dim`, `value` and `gradient` are required. The Hessian defaults
/// to symmetrized central differences of the gradient. The optional
/// closed forms let the generic machinery skip inner Newton solves.
pub trait ConvexPotential: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, theta: &[f64]) -> f64;

    fn gradient(&self, theta: &[f64]) -> Vec<f64>;

    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        fd_hessian(self, theta, NumericSettings::default().fd_step)
    }

    fn in_domain(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim() && theta.iter().all(|v| v.is_finite()) && self.value(theta).is_finite()
    }

    /// Closed-form Legendre transform `φ*(η)`, if known.
    fn dual_value(&self, _eta: &[f64]) -> Option<f64> {
        None
    }

    /// Closed-form inverse map `θ = ∇φ*(η)`, if known.
    fn dual_gradient(&self, _eta: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Closed-form solution of `∂_{d₀+j} φ(θ_free, z) = c_j` for `z`, if known.
    fn constrained_solution(&self, _free: &[f64], _constants: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

macro_rules! forward_potential {
    ($($ty:ty),*) => {$(
        impl<P: ConvexPotential + ?Sized> ConvexPotential for $ty {
            fn dim(&self) -> usize { (**self).dim() }
            fn value(&self, theta: &[f64]) -> f64 { (**self).value(theta) }
            fn gradient(&self, theta: &[f64]) -> Vec<f64> { (**self).gradient(theta) }
            fn hessian(&self, theta: &[f64]) -> DMatrix<f64> { (**self).hessian(theta) }
            fn in_domain(&self, theta: &[f64]) -> bool { (**self).in_domain(theta) }
            fn dual_value(&self, eta: &[f64]) -> Option<f64> { (**self).dual_value(eta) }
            fn dual_gradient(&self, eta: &[f64]) -> Option<Vec<f64>> { (**self).dual_gradient(eta) }
            fn constrained_solution(&self, free: &[f64], constants: &[f64]) -> Option<Vec<f64>> {
                (**self).constrained_solution(free, constants)
            }
        }
    )*};
}

forward_potential!(&P, Box<P>, Arc<P>);

/// Hessian synthesized from central differences of the gradient, symmetrized.
pub fn fd_hessian<P: ConvexPotential + ?Sized>(system: &P, theta: &[f64], step: f64) -> DMatrix<f64> {
    let d = theta.len();
    let mut h = DMatrix::zeros(d, d);
    let mut probe = theta.to_vec();
    for i in 0..d {
        let hi = step * theta[i].abs().max(1.0);
        probe[i] = theta[i] + hi;
        let plus = system.gradient(&probe);
        probe[i] = theta[i] - hi;
        let minus = system.gradient(&probe);
        probe[i] = theta[i];
        for r in 0..d {
            h[(r, i)] = (plus[r] - minus[r]) / (2.0 * hi);
        }
    }
    (&h + h.transpose()) * 0.5
}

/// Largest relative discrepancy between the gradient oracle and central
/// differences of the value oracle at `theta`.
pub fn gradient_fd_error<P: ConvexPotential + ?Sized>(system: &P, theta: &[f64], step: f64) -> f64 {
    let grad = system.gradient(theta);
    let mut probe = theta.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let hi = step * theta[i].abs().max(1.0);
        probe[i] = theta[i] + hi;
        let plus = system.value(&probe);
        probe[i] = theta[i] - hi;
        let minus = system.value(&probe);
        probe[i] = theta[i];
        let fd = (plus - minus) / (2.0 * hi);
        let scale = grad[i].abs().max(fd.abs()).max(1.0);
        worst = worst.max((fd - grad[i]).abs() / scale);
    }
    worst
}

fn check_point<P: ConvexPotential + ?Sized>(system: &P, theta: &[f64]) -> Result<()> {
    ensure_len(system.dim(), theta.len())?;
    if system.in_domain(theta) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{theta:?}")))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `η(θ) = ∇φ(θ)`.
pub fn natural_to_mixture<P: ConvexPotential + ?Sized>(system: &P, theta: &NaturalPoint) -> Result<MixturePoint> {
    check_point(system, theta)?;
    Ok(MixturePoint(system.gradient(theta)))
}

/// `θ(η) = ∇φ*(η)` with default settings and a zero starting point.
pub fn mixture_to_natural<P: ConvexPotential + ?Sized>(system: &P, eta: &MixturePoint) -> Result<NaturalPoint> {
    mixture_to_natural_with(system, eta, None, &NumericSettings::default())
}

struct LegendreObjective<'a, P: ?Sized> {
    system: &'a P,
    eta: &'a [f64],
}

impl<P: ConvexPotential + ?Sized> SmoothConvex for LegendreObjective<'_, P> {
    fn value(&self, x: &[f64]) -> Option<f64> {
        if !self.system.in_domain(x) {
            return None;
        }
        let v = self.system.value(x) - dot(self.eta, x);
        v.is_finite().then_some(v)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.system.gradient(x);
        g.iter_mut().zip(self.eta).for_each(|(gi, ei)| *gi -= ei);
        g
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        self.system.hessian(x)
    }
}

/// Inverts `η = ∇φ(θ)`. Uses the dual-gradient oracle when the potential
/// has one, otherwise damped Newton on `φ(θ) − ⟨η, θ⟩` from `warm_start`
/// (or the origin).
pub fn mixture_to_natural_with<P: ConvexPotential + ?Sized>(
    system: &P,
    eta: &MixturePoint,
    warm_start: Option<&NaturalPoint>,
    settings: &NumericSettings,
) -> Result<NaturalPoint> {
    Ok(mixture_to_natural_counted(system, eta, warm_start, settings)?.0)
}

pub(crate) fn mixture_to_natural_counted<P: ConvexPotential + ?Sized>(
    system: &P,
    eta: &MixturePoint,
    warm_start: Option<&NaturalPoint>,
    settings: &NumericSettings,
) -> Result<(NaturalPoint, usize)> {
    ensure_len(system.dim(), eta.len())?;
    if !eta.is_finite() {
        return Err(Error::Domain(format!("non-finite mixture point {:?}", eta.0)));
    }
    if let Some(theta) = system.dual_gradient(eta) {
        return Ok((NaturalPoint(theta), 0));
    }
    let start = match warm_start {
        Some(w) => {
            ensure_len(system.dim(), w.len())?;
            w.0.clone()
        }
        None => vec![0.0; system.dim()],
    };
    let objective = LegendreObjective { system, eta };
    let out = newton::minimize(&objective, start, settings, "Legendre inversion")?;
    Ok((NaturalPoint(out.x), out.iterations))
}

/// `D^φ(θ₁‖θ₂) = ⟨∇φ(θ₁), θ₁ − θ₂⟩ − φ(θ₁) + φ(θ₂)`.
pub fn bregman_divergence<P: ConvexPotential + ?Sized>(
    system: &P,
    theta1: &NaturalPoint,
    theta2: &NaturalPoint,
) -> Result<f64> {
    check_point(system, theta1)?;
    check_point(system, theta2)?;
    Ok(divergence_unchecked(system, theta1, theta2))
}

pub(crate) fn divergence_unchecked<P: ConvexPotential + ?Sized>(system: &P, theta1: &[f64], theta2: &[f64]) -> f64 {
    let eta1 = system.gradient(theta1);
    let lin: f64 = eta1.iter().zip(theta1.iter().zip(theta2)).map(|(e, (a, b))| e * (a - b)).sum();
    lin - system.value(theta1) + system.value(theta2)
}

/// Legendre transform value `φ*(η) = ⟨η, θ(η)⟩ − φ(θ(η))`, using the closed
/// form when present.
pub fn legendre_value<P: ConvexPotential + ?Sized>(system: &P, eta: &MixturePoint) -> Result<f64> {
    if let Some(v) = system.dual_value(eta) {
        return Ok(v);
    }
    let theta = mixture_to_natural(system, eta)?;
    Ok(dot(eta, &theta) - system.value(&theta))
}

/// `D^{φ*}(η₁‖η₂)`, computed on the dual side. Equals
/// `D^φ(θ(η₂)‖θ(η₁))`.
pub fn dual_divergence<P: ConvexPotential + ?Sized>(
    system: &P,
    eta1: &MixturePoint,
    eta2: &MixturePoint,
) -> Result<f64> {
    let theta1 = mixture_to_natural(system, eta1)?;
    let dual1 = match system.dual_value(eta1) {
        Some(v) => v,
        None => dot(eta1, &theta1) - system.value(&theta1),
    };
    let dual2 = legendre_value(system, eta2)?;
    let lin: f64 = theta1.iter().zip(eta1.iter().zip(eta2.iter())).map(|(t, (a, b))| t * (a - b)).sum();
    Ok(lin - dual1 + dual2)
}

/// A canonical mixture family: mixture coordinates `d₀+1 ..= d` are pinned
/// to `constants`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFamily {
    free_count: usize,
    constants: Vec<f64>,
}

impl MixtureFamily {
    pub fn new(free_count: usize, constants: Vec<f64>) -> Result<Self> {
        if constants.is_empty() {
            return Err(Error::Argument("a mixture family needs at least one constraint".into()));
        }
        if constants.iter().any(|c| !c.is_finite()) {
            return Err(Error::Argument("non-finite family constant".into()));
        }
        Ok(Self { free_count, constants })
    }

    /// `d₀`, the number of unconstrained coordinates.
    pub fn free_count(&self) -> usize {
        self.free_count
    }

    pub fn constraint_count(&self) -> usize {
        self.constants.len()
    }

    pub fn constants(&self) -> &[f64] {
        &self.constants
    }

    pub fn dim(&self) -> usize {
        self.free_count + self.constants.len()
    }

    /// `max_j |∂_{d₀+j} φ(θ) − c_j|`.
    pub fn residual<P: ConvexPotential + ?Sized>(&self, system: &P, theta: &[f64]) -> f64 {
        let grad = system.gradient(theta);
        grad[self.free_count..].iter().zip(&self.constants).fold(0.0, |m, (g, c)| m.max((g - c).abs()))
    }

    pub fn contains<P: ConvexPotential + ?Sized>(&self, system: &P, theta: &[f64], tol: f64) -> bool {
        theta.len() == self.dim() && system.in_domain(theta) && self.residual(system, theta) <= tol
    }

    fn check_system<P: ConvexPotential + ?Sized>(&self, system: &P) -> Result<()> {
        if self.dim() != system.dim() {
            return Err(Error::Argument(format!(
                "family of dimension {} used with a {}-dimensional potential",
                self.dim(),
                system.dim()
            )));
        }
        Ok(())
    }
}

struct ConstrainedReduction<'a, P: ?Sized> {
    system: &'a P,
    free: &'a [f64],
    constants: &'a [f64],
}

impl<P: ConvexPotential + ?Sized> ConstrainedReduction<'_, P> {
    fn full(&self, z: &[f64]) -> Vec<f64> {
        let mut theta = self.free.to_vec();
        theta.extend_from_slice(z);
        theta
    }
}

impl<P: ConvexPotential + ?Sized> SmoothConvex for ConstrainedReduction<'_, P> {
    fn value(&self, z: &[f64]) -> Option<f64> {
        let theta = self.full(z);
        if !self.system.in_domain(&theta) {
            return None;
        }
        let v = self.system.value(&theta) - dot(self.constants, z);
        v.is_finite().then_some(v)
    }
    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let g = self.system.gradient(&self.full(z));
        g[self.free.len()..].iter().zip(self.constants).map(|(gi, ci)| gi - ci).collect()
    }
    fn hessian(&self, z: &[f64]) -> DMatrix<f64> {
        let h = self.system.hessian(&self.full(z));
        let d0 = self.free.len();
        let k = z.len();
        h.view((d0, d0), (k, k)).into_owned()
    }
}

/// e-projection `argmin_{θ′ ∈ ℳ} D^φ(θ′‖θ̄)` with default settings.
pub fn e_project<P: ConvexPotential + ?Sized>(
    system: &P,
    family: &MixtureFamily,
    theta_bar: &NaturalPoint,
) -> Result<NaturalPoint> {
    e_project_with(system, family, theta_bar, &NumericSettings::default())
}

pub fn e_project_with<P: ConvexPotential + ?Sized>(
    system: &P,
    family: &MixtureFamily,
    theta_bar: &NaturalPoint,
    settings: &NumericSettings,
) -> Result<NaturalPoint> {
    Ok(e_project_counted(system, family, theta_bar, settings)?.0)
}

/// e-projection together with the number of inner Newton iterations used
/// (zero when a closed form is available).
pub(crate) fn e_project_counted<P: ConvexPotential + ?Sized>(
    system: &P,
    family: &MixtureFamily,
    theta_bar: &NaturalPoint,
    settings: &NumericSettings,
) -> Result<(NaturalPoint, usize)> {
    family.check_system(system)?;
    ensure_len(system.dim(), theta_bar.len())?;
    if !theta_bar.is_finite() {
        return Err(Error::Domain(format!("{:?}", theta_bar.0)));
    }
    let d0 = family.free_count();
    let free = &theta_bar[..d0];
    if let Some(z) = system.constrained_solution(free, family.constants()) {
        let mut theta = free.to_vec();
        theta.extend(z);
        if !system.in_domain(&theta) {
            return Err(Error::Domain(format!("projection {theta:?}")));
        }
        return Ok((NaturalPoint(theta), 0));
    }
    let reduction = ConstrainedReduction { system, free, constants: family.constants() };
    let start = theta_bar[d0..].to_vec();
    let out = newton::minimize(&reduction, start, settings, "e-projection")?;
    Ok((NaturalPoint(reduction.full(&out.x)), out.iterations))
}

/// `φ(θ) = ½ θᵀ A θ` for symmetric positive definite `A`. With `A = I`
/// the system is self-dual and `D^φ` is half the squared distance.
#[derive(Debug, Clone)]
pub struct QuadraticPotential {
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
}

impl QuadraticPotential {
    pub fn identity(dim: usize) -> Self {
        Self { a: DMatrix::identity(dim, dim), a_inv: DMatrix::identity(dim, dim) }
    }

    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::Argument("quadratic potential needs a non-empty square matrix".into()));
        }
        let sym = (&a + a.transpose()) * 0.5;
        if (&sym - &a).abs().max() > 1e-12 * a.abs().max().max(1.0) {
            return Err(Error::Argument("quadratic potential matrix is not symmetric".into()));
        }
        let chol = sym
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Argument("quadratic potential matrix is not positive definite".into()))?;
        Ok(Self { a_inv: chol.inverse(), a: sym })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl ConvexPotential for QuadraticPotential {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let t = DVector::from_column_slice(theta);
        0.5 * t.dot(&(&self.a * &t))
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        (&self.a * DVector::from_column_slice(theta)).as_slice().to_vec()
    }

    fn hessian(&self, _theta: &[f64]) -> DMatrix<f64> {
        self.a.clone()
    }

    fn dual_value(&self, eta: &[f64]) -> Option<f64> {
        let e = DVector::from_column_slice(eta);
        Some(0.5 * e.dot(&(&self.a_inv * &e)))
    }

    fn dual_gradient(&self, eta: &[f64]) -> Option<Vec<f64>> {
        Some((&self.a_inv * DVector::from_column_slice(eta)).as_slice().to_vec())
    }

    fn constrained_solution(&self, free: &[f64], constants: &[f64]) -> Option<Vec<f64>> {
        // A_zz z = c − A_zf θ_f
        let d0 = free.len();
        let k = constants.len();
        let a_zz = self.a.view((d0, d0), (k, k)).into_owned();
        let a_zf = self.a.view((d0, 0), (k, d0));
        let rhs = DVector::from_column_slice(constants) - a_zf * DVector::from_column_slice(free);
        let z = a_zz.cholesky()?.solve(&rhs);
        Some(z.as_slice().to_vec())
    }
}

/// Wraps a potential and hides its closed forms so that every operation
/// goes through the generic Newton paths. Optionally replaces the Hessian
/// oracle with finite differences.
#[derive(Debug, Clone)]
pub struct GenericPotential<P> {
    inner: P,
    synthesize_hessian: bool,
}

impl<P: ConvexPotential> GenericPotential<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, synthesize_hessian: false }
    }

    pub fn with_fd_hessian(inner: P) -> Self {
        Self { inner, synthesize_hessian: true }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: ConvexPotential> ConvexPotential for GenericPotential<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, theta: &[f64]) -> f64 {
        self.inner.value(theta)
    }
    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.inner.gradient(theta)
    }
    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        if self.synthesize_hessian {
            fd_hessian(&self.inner, theta, NumericSettings::default().fd_step)
        } else {
            self.inner.hessian(theta)
        }
    }
    fn in_domain(&self, theta: &[f64]) -> bool {
        self.inner.in_domain(theta)
    }
}

/// The potential `θ̄ ↦ φ(U θ̄)`.
#[derive(Debug, Clone)]
pub struct ComposedPotential<P> {
    inner: P,
    u: DMatrix<f64>,
    u_inv: DMatrix<f64>,
}

impl<P> ComposedPotential<P> {
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// Maps canonical coordinates back: `θ = U θ̄`.
    pub fn to_original(&self, theta_bar: &[f64]) -> Vec<f64> {
        (&self.u * DVector::from_column_slice(theta_bar)).as_slice().to_vec()
    }

    pub fn from_original(&self, theta: &[f64]) -> Vec<f64> {
        (&self.u_inv * DVector::from_column_slice(theta)).as_slice().to_vec()
    }
}

impl<P: ConvexPotential> ConvexPotential for ComposedPotential<P> {
    fn dim(&self) -> usize {
        self.u.ncols()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        self.inner.value(&self.to_original(theta))
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let g = DVector::from_vec(self.inner.gradient(&self.to_original(theta)));
        (self.u.transpose() * g).as_slice().to_vec()
    }

    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let h = self.inner.hessian(&self.to_original(theta));
        self.u.transpose() * h * &self.u
    }

    fn in_domain(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim() && self.inner.in_domain(&self.to_original(theta))
    }

    fn dual_value(&self, eta: &[f64]) -> Option<f64> {
        // φ̄*(η̄) = φ*(U^{-T} η̄)
        let pulled = self.u_inv.transpose() * DVector::from_column_slice(eta);
        self.inner.dual_value(pulled.as_slice())
    }

    fn dual_gradient(&self, eta: &[f64]) -> Option<Vec<f64>> {
        let pulled = self.u_inv.transpose() * DVector::from_column_slice(eta);
        let theta = self.inner.dual_gradient(pulled.as_slice())?;
        Some(self.from_original(&theta))
    }
}

/// Re-parametrizes `φ` by `θ = U θ̄` so that the constraints
/// `Σ_i u^i_{d₀+j} ∂_i φ(θ) = c_j` become the canonical pins on the last
/// `k = c.len()` mixture coordinates of `φ ∘ U`. The constraint vectors
/// are the last `k` columns of `U`.
pub fn canonicalize<P: ConvexPotential>(
    system: P,
    u: DMatrix<f64>,
    constants: Vec<f64>,
) -> Result<(ComposedPotential<P>, MixtureFamily)> {
    let d = system.dim();
    if u.nrows() != d || u.ncols() != d {
        return Err(Error::Argument(format!("basis matrix must be {d}x{d}")));
    }
    if constants.len() > d {
        return Err(Error::Argument("more constraints than dimensions".into()));
    }
    let lu = u.clone().lu();
    let u_inv = lu.try_inverse().ok_or_else(|| Error::Argument("basis matrix is singular".into()))?;
    let cond = u.norm() * u_inv.norm();
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::Argument("basis matrix is singular".into()));
    }
    let family = MixtureFamily::new(d - constants.len(), constants)?;
    Ok((ComposedPotential { inner: system, u, u_inv }, family))
}
