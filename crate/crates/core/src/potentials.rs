//! Closed-form Bregman systems over a finite sample space.
//!
//! Both systems are built from a [`FeatureBasis`] `f_1, …, f_{d₀}` on a
//! finite set `𝒳`, extended by the constant function `f_{d₀+1} ≡ 1`. The
//! score of a point is `s_θ(x) = Σ_j f_j(x) θʲ + θ^{d₀+1}`.

use nalgebra::{DMatrix, DVector};

use crate::bregman::ConvexPotential;
use crate::error::{Error, Result};

/// Dense feature table `F[j][x] = f_j(x)` with optional duals
/// `G[j][x] = gʲ(x)`, the latter including the row paired with the
/// constant function.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBasis {
    sample_size: usize,
    features: DMatrix<f64>,
    duals: Option<DMatrix<f64>>,
    /// Features with the constant row appended: `(d₀+1) × |𝒳|`.
    extended: DMatrix<f64>,
}

impl FeatureBasis {
    /// `features` is `d₀ × |𝒳|`; `d₀ = 0` is allowed.
    pub fn new(sample_size: usize, features: DMatrix<f64>) -> Result<Self> {
        if sample_size == 0 {
            return Err(Error::Argument("sample space must be non-empty".into()));
        }
        if features.ncols() != sample_size && features.nrows() > 0 {
            return Err(Error::DimensionMismatch { expected: sample_size, found: features.ncols() });
        }
        let d0 = features.nrows();
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite feature value".into()));
        }
        let mut extended = DMatrix::from_element(d0 + 1, sample_size, 1.0);
        if d0 > 0 {
            extended.view_mut((0, 0), (d0, sample_size)).copy_from(&features);
        }
        let rank = extended.clone().svd(false, false).rank(1e-10 * extended.norm().max(1.0));
        if rank < d0 + 1 {
            return Err(Error::Argument(format!(
                "features together with the constant function have rank {rank}, need {}",
                d0 + 1
            )));
        }
        let features = if d0 == 0 { DMatrix::zeros(0, sample_size) } else { features };
        Ok(Self { sample_size, features, duals: None, extended })
    }

    /// Builds from one row per feature.
    pub fn from_rows(sample_size: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if let Some(bad) = rows.iter().find(|r| r.len() != sample_size) {
            return Err(Error::DimensionMismatch { expected: sample_size, found: bad.len() });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(sample_size, DMatrix::from_row_slice(rows.len(), sample_size, &flat))
    }

    /// Attaches dual functions, `(d₀+1) × |𝒳|`, checking
    /// `Σ_x f_i(x) gʲ(x) = δ_iʲ` with `f_{d₀+1} ≡ 1`.
    pub fn with_duals(mut self, duals: DMatrix<f64>) -> Result<Self> {
        let d = self.features.nrows() + 1;
        if duals.nrows() != d || duals.ncols() != self.sample_size {
            return Err(Error::Argument(format!(
                "duals must be {d}x{}, got {}x{}",
                self.sample_size,
                duals.nrows(),
                duals.ncols()
            )));
        }
        let pairing = &self.extended * duals.transpose();
        let err = (pairing - DMatrix::identity(d, d)).abs().max();
        if err > 1e-10 {
            return Err(Error::Argument(format!("duals are not biorthogonal (error {err:e})")));
        }
        self.duals = Some(duals);
        Ok(self)
    }

    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    pub fn feature_count(&self) -> usize {
        self.features.nrows()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn duals(&self) -> Option<&DMatrix<f64>> {
        self.duals.as_ref()
    }

    /// Feature table including the constant row.
    pub fn extended(&self) -> &DMatrix<f64> {
        &self.extended
    }

    /// `s_θ(x)` for every sample point.
    pub fn scores(&self, theta: &[f64]) -> Vec<f64> {
        (self.extended.transpose() * DVector::from_column_slice(theta)).as_slice().to_vec()
    }

    /// `Σ_j f_j(x) θʲ` over the free coordinates only.
    pub fn free_scores(&self, free: &[f64]) -> Vec<f64> {
        if free.is_empty() {
            return vec![0.0; self.sample_size];
        }
        (self.features.transpose() * DVector::from_column_slice(free)).as_slice().to_vec()
    }
}

/// `logΣ_x exp(s_x)` with a max shift.
pub fn log_sum_exp(s: &[f64]) -> f64 {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `φ(θ) = Σ_x exp(s_θ(x))`.
#[derive(Debug, Clone)]
pub struct LogPartitionSystem {
    basis: FeatureBasis,
}

pub fn make_log_partition_system(basis: FeatureBasis) -> Result<LogPartitionSystem> {
    Ok(LogPartitionSystem { basis })
}

impl LogPartitionSystem {
    pub fn basis(&self) -> &FeatureBasis {
        &self.basis
    }

    /// Unnormalized weights `exp(s_θ(x))`.
    pub fn weights(&self, theta: &[f64]) -> Vec<f64> {
        self.basis.scores(theta).into_iter().map(f64::exp).collect()
    }

    /// `u(θ_free) = −logΣ_x exp(Σ_j f_j(x) θʲ)`, the last coordinate that
    /// normalizes the weights to a probability distribution.
    pub fn normalizer(&self, free: &[f64]) -> f64 {
        -log_sum_exp(&self.basis.free_scores(free))
    }

    /// Natural point of a strictly positive distribution, given the free
    /// coordinates are recovered through the duals. Requires duals.
    pub fn natural_of_distribution(&self, p: &[f64]) -> Result<Vec<f64>> {
        let duals = self.basis.duals().ok_or_else(|| Error::Argument("basis has no dual functions".into()))?;
        if p.len() != self.basis.sample_size {
            return Err(Error::DimensionMismatch { expected: self.basis.sample_size, found: p.len() });
        }
        if p.iter().any(|v| v.is_nan() || *v <= 0.0) {
            return Err(Error::Domain("distribution must be strictly positive".into()));
        }
        let logs = DVector::from_iterator(p.len(), p.iter().map(|v| v.ln()));
        Ok((duals * logs).as_slice().to_vec())
    }
}

impl ConvexPotential for LogPartitionSystem {
    fn dim(&self) -> usize {
        self.basis.feature_count() + 1
    }

    fn value(&self, theta: &[f64]) -> f64 {
        log_sum_exp(&self.basis.scores(theta)).exp()
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let w = DVector::from_vec(self.weights(theta));
        (&self.basis.extended * w).as_slice().to_vec()
    }

    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let w = self.weights(theta);
        let mut scaled = self.basis.extended.clone();
        for (mut col, wx) in scaled.column_iter_mut().zip(&w) {
            col *= *wx;
        }
        &scaled * self.basis.extended.transpose()
    }

    fn in_domain(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim() && theta.iter().all(|v| v.is_finite()) && self.value(theta).is_finite()
    }

    fn constrained_solution(&self, free: &[f64], constants: &[f64]) -> Option<Vec<f64>> {
        match constants {
            [c] if *c > 0.0 => Some(vec![c.ln() + self.normalizer(free)]),
            _ => None,
        }
    }
}

/// `φ(θ) = ½ Σ_x s_θ(x)²`, a quadratic form in the feature Gram matrix.
#[derive(Debug, Clone)]
pub struct QuadraticFeatureSystem {
    basis: FeatureBasis,
    gram: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
}

pub fn make_quadratic_system(basis: FeatureBasis) -> Result<QuadraticFeatureSystem> {
    let gram = basis.extended() * basis.extended().transpose();
    let gram_inv =
        gram.clone().cholesky().ok_or_else(|| Error::Argument("feature Gram matrix is singular".into()))?.inverse();
    Ok(QuadraticFeatureSystem { basis, gram, gram_inv })
}

impl QuadraticFeatureSystem {
    pub fn basis(&self) -> &FeatureBasis {
        &self.basis
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }
}

impl ConvexPotential for QuadraticFeatureSystem {
    fn dim(&self) -> usize {
        self.basis.feature_count() + 1
    }

    fn value(&self, theta: &[f64]) -> f64 {
        0.5 * self.basis.scores(theta).iter().map(|s| s * s).sum::<f64>()
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let s = DVector::from_vec(self.basis.scores(theta));
        (&self.basis.extended * s).as_slice().to_vec()
    }

    fn hessian(&self, _theta: &[f64]) -> DMatrix<f64> {
        self.gram.clone()
    }

    fn dual_value(&self, eta: &[f64]) -> Option<f64> {
        let e = DVector::from_column_slice(eta);
        Some(0.5 * e.dot(&(&self.gram_inv * &e)))
    }

    fn dual_gradient(&self, eta: &[f64]) -> Option<Vec<f64>> {
        Some((&self.gram_inv * DVector::from_column_slice(eta)).as_slice().to_vec())
    }

    fn constrained_solution(&self, free: &[f64], constants: &[f64]) -> Option<Vec<f64>> {
        match constants {
            [c] => {
                let total: f64 = self.basis.free_scores(free).iter().sum();
                Some(vec![(c - total) / self.basis.sample_size as f64])
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn empty_feature_set_normalizer() {
        let basis = FeatureBasis::new(3, DMatrix::zeros(0, 3)).unwrap();
        let sys = make_log_partition_system(basis).unwrap();
        assert_abs_diff_eq!(sys.normalizer(&[]), -(3f64.ln()), epsilon = 1e-15);
    }

    #[test]
    fn zero_free_coordinates_give_uniform_normalizer() {
        let basis = FeatureBasis::from_rows(4, &[vec![0.0, 1.0, 2.0, 0.5], vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        let sys = make_log_partition_system(basis).unwrap();
        assert_abs_diff_eq!(sys.normalizer(&[0.0, 0.0]), -(4f64.ln()), epsilon = 1e-15);
    }

    #[test]
    fn two_point_mixture_coordinate() {
        let basis = FeatureBasis::from_rows(2, &[vec![0.0, 1.0]]).unwrap();
        let sys = make_log_partition_system(basis).unwrap();
        let theta = [0.7, sys.normalizer(&[0.7])];
        let eta = sys.gradient(&theta);
        let e = 0.7f64.exp();
        assert_abs_diff_eq!(eta[0], e / (1.0 + e), epsilon = 1e-15);
        assert_abs_diff_eq!(eta[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rank_deficient_basis_is_rejected() {
        let err = FeatureBasis::from_rows(3, &[vec![1.0, 1.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
        let err = FeatureBasis::from_rows(3, &[vec![1.0, 0.0, 2.0], vec![2.0, 0.0, 4.0]]).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn non_biorthogonal_duals_are_rejected() {
        let basis = FeatureBasis::from_rows(2, &[vec![0.0, 1.0]]).unwrap();
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(basis.clone().with_duals(bad).is_err());
        let good = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, 0.0]);
        assert!(basis.with_duals(good).is_ok());
    }

    #[test]
    fn quadratic_system_at_origin() {
        let basis = FeatureBasis::from_rows(3, &[vec![1.0, -1.0, 0.5]]).unwrap();
        let sys = make_quadratic_system(basis).unwrap();
        assert_eq!(sys.gradient(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(sys.constrained_solution(&[0.0], &[0.0]), Some(vec![0.0]));
    }

    #[test]
    fn zero_sum_features_project_to_zero() {
        let basis = FeatureBasis::from_rows(3, &[vec![1.0, -1.0, 0.0], vec![0.5, 0.5, -1.0]]).unwrap();
        let sys = make_quadratic_system(basis).unwrap();
        for free in [[0.3, -2.0], [5.0, 1.0], [-1.0, 0.0]] {
            let z = sys.constrained_solution(&free, &[0.0]).unwrap();
            assert_abs_diff_eq!(z[0], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn quadratic_hessian_is_gram() {
        let basis = FeatureBasis::from_rows(3, &[vec![1.0, 2.0, 0.0]]).unwrap();
        let sys = make_quadratic_system(basis).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[5.0, 3.0, 3.0, 3.0]);
        assert_eq!(sys.hessian(&[0.1, 0.2]), expected);
    }

    #[test]
    fn log_sum_exp_survives_large_scores() {
        assert_abs_diff_eq!(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln(), epsilon = 1e-12);
    }
}
