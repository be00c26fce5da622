//! Clipped divergence between a linearly parametrized family of tables
//! and an exponential family with an affine m-projection.

use serde::{Deserialize, Serialize};

use super::RdBasis;
use crate::error::{ensure_len, Error, Result};

/// `P̃_η = Σ_j η_j gʲ + offset` over a flattened finite space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub duals: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(duals: Vec<Vec<f64>>, offset: Vec<f64>) -> Result<Self> {
        if let Some(bad) = duals.iter().find(|g| g.len() != offset.len()) {
            return Err(Error::DimensionMismatch { expected: offset.len(), found: bad.len() });
        }
        Ok(Self { duals, offset })
    }

    pub fn from_rd_basis(basis: &RdBasis) -> Self {
        Self { duals: basis.duals().to_vec(), offset: basis.offset().to_vec() }
    }

    pub fn table(&self, eta: &[f64]) -> Result<Vec<f64>> {
        ensure_len(self.duals.len(), eta.len())?;
        let mut p = self.offset.clone();
        for (e, g) in eta.iter().zip(&self.duals) {
            p.iter_mut().zip(g).for_each(|(pi, gi)| *pi += e * gi);
        }
        Ok(p)
    }
}

/// `Σ P̃_η (log(P̃_η)₊ − log(Γ(P̃_η))₊)` with `(v)₊ = max(v, ε)`, where
/// `projection` is the affine m-projection onto the exponential family.
pub fn em_objective_general<F>(mixture: &MixtureSpec, projection: F, eps: f64, eta: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Argument(format!("epsilon must be positive, got {eps}")));
    }
    let p = mixture.table(eta)?;
    let q = projection(&p);
    ensure_len(p.len(), q.len())?;
    Ok(p.iter().zip(&q).map(|(a, b)| a * (a.max(eps).ln() - b.max(eps).ln())).sum())
}
