//! Damped Newton minimization shared by the generic e-projection, the
//! Legendre inversion, and the mirror-descent inner solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::settings::NumericSettings;

/// A smooth convex function on an open domain. `value` returns `None`
/// outside the domain (or where the value is not finite).
pub(crate) trait SmoothConvex {
    fn value(&self, x: &[f64]) -> Option<f64>;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
}

#[derive(Debug, Clone)]
pub(crate) struct NewtonOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `H p = -g`, falling back to a shifted system when `H` is
/// numerically indefinite.
pub(crate) fn newton_direction(h: &DMatrix<f64>, g: &[f64]) -> Option<Vec<f64>> {
    let rhs = -DVector::from_column_slice(g);
    if let Some(chol) = h.clone().cholesky() {
        return Some(chol.solve(&rhs).as_slice().to_vec());
    }
    let scale = h.diagonal().iter().fold(0.0_f64, |m, d| m.max(d.abs())).max(1e-300);
    let mut shift = 1e-12 * scale;
    for _ in 0..40 {
        let shifted = h + DMatrix::identity(h.nrows(), h.ncols()) * shift;
        if let Some(chol) = shifted.cholesky() {
            return Some(chol.solve(&rhs).as_slice().to_vec());
        }
        shift *= 10.0;
    }
    None
}

/// Damped Newton with step halving. A step is accepted when it satisfies
/// the Armijo condition or, once values stop resolving in floating point,
/// when it reduces the gradient norm.
pub(crate) fn minimize<F: SmoothConvex>(
    f: &F,
    x0: Vec<f64>,
    settings: &NumericSettings,
    what: &'static str,
) -> Result<NewtonOutcome> {
    let mut x = x0;
    let mut value = f.value(&x).ok_or_else(|| Error::Domain(format!("{what}: starting point outside domain")))?;
    let mut grad = f.gradient(&x);
    for iteration in 0..=settings.newton_max_iterations {
        let gnorm = inf_norm(&grad);
        if gnorm <= settings.newton_tolerance {
            return Ok(NewtonOutcome { x, iterations: iteration });
        }
        if iteration == settings.newton_max_iterations {
            return Err(Error::Convergence { what, iterations: iteration, residual: gnorm });
        }
        let h = f.hessian(&x);
        let step =
            newton_direction(&h, &grad).ok_or(Error::Convergence { what, iterations: iteration, residual: gnorm })?;
        let slope: f64 = step.iter().zip(&grad).map(|(p, g)| p * g).sum();
        let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pnorm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
        if pnorm <= 4.0 * f64::EPSILON * (1.0 + xnorm) {
            // Floating-point floor: the Newton step no longer moves x.
            return Ok(NewtonOutcome { x, iterations: iteration });
        }

        let noise_floor = gnorm <= settings.newton_tolerance.sqrt();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=settings.max_halvings {
            let candidate: Vec<f64> = x.iter().zip(&step).map(|(xi, pi)| xi + t * pi).collect();
            if let Some(v) = f.value(&candidate) {
                let armijo = v <= value + 1e-4 * t * slope;
                let cand_grad = f.gradient(&candidate);
                if armijo || inf_norm(&cand_grad) < gnorm {
                    if noise_floor && inf_norm(&cand_grad) >= gnorm {
                        // Rounding noise: the step no longer reduces the gradient.
                        return Ok(NewtonOutcome { x, iterations: iteration });
                    }
                    x = candidate;
                    value = v;
                    grad = cand_grad;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            if noise_floor {
                return Ok(NewtonOutcome { x, iterations: iteration });
            }
            return Err(Error::Convergence { what, iterations: iteration, residual: gnorm });
        }
    }
    unreachable!("loop returns on its final iteration")
}
