//! Fixed problem instances shared by the benchmarks.

use bregman_ab::{
    e_project, DiscreteDistribution, MixtureFamily, MixtureObjective, NaturalPoint, QuadraticMixtureForm,
    QuadraticPotential, RdProblem,
};
use nalgebra::DMatrix;

/// The 3×3 reference problem shipped with the CLI.
pub fn reference_problem() -> RdProblem {
    let p_x = DiscreteDistribution::new(vec![0.5, 0.3, 0.2]).expect("valid source");
    let r = vec![vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 0.0], vec![3.0, 0.0, 1.0]];
    RdProblem::new(p_x, r, 1.5).expect("valid reference problem")
}

/// An `n`-symbol problem with distortion `|x − y| + (x·y mod 3)/4` and a
/// geometric source, at a level halfway between the trivial bounds.
pub fn banded_problem(n: usize) -> RdProblem {
    let weights: Vec<f64> = (0..n).map(|x| 0.8f64.powi(x as i32)).collect();
    let p_x = DiscreteDistribution::normalized(weights).expect("valid source");
    let r: Vec<Vec<f64>> =
        (0..n).map(|x| (0..n).map(|y| x.abs_diff(y) as f64 + ((x * y) % 3) as f64 / 4.0).collect()).collect();
    let bound = |pick: fn(f64, f64) -> f64, start: f64| -> f64 {
        p_x.probs().iter().zip(&r).map(|(p, row)| p * row.iter().copied().fold(start, pick)).sum()
    };
    let level = 0.5 * (bound(f64::min, f64::INFINITY) + bound(f64::max, f64::NEG_INFINITY));
    RdProblem::new(p_x, r, level).expect("valid banded problem")
}

/// A three-dimensional quadratic potential with a quadratic objective on
/// the family `η₃ = 1`, together with a step parameter that satisfies the
/// smoothness condition.
pub struct QuadraticFixture {
    pub system: QuadraticPotential,
    pub family: MixtureFamily,
    pub form: QuadraticMixtureForm,
    pub gamma: f64,
}

impl QuadraticFixture {
    pub fn new() -> Self {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, 0.2, 0.1, 0.2, 1.0]);
        let q = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.8, 0.1, 0.0, 0.1, 0.5]);
        let gamma = a.symmetric_eigenvalues().max() * q.symmetric_eigenvalues().max();
        Self {
            system: QuadraticPotential::new(a).expect("symmetric positive definite"),
            family: MixtureFamily::new(2, vec![1.0]).expect("one constraint"),
            form: QuadraticMixtureForm::new(q, vec![0.4, -0.3, 0.0]).expect("valid form"),
            gamma,
        }
    }

    pub fn objective(&self) -> MixtureObjective<&QuadraticPotential, QuadraticMixtureForm> {
        MixtureObjective::new(&self.system, self.form.clone()).expect("matching dimensions")
    }

    /// A point of the family to start from.
    pub fn start(&self) -> NaturalPoint {
        e_project(&self.system, &self.family, &NaturalPoint(vec![0.5, -0.5, 0.0])).expect("projection")
    }
}

impl Default for QuadraticFixture {
    fn default() -> Self {
        Self::new()
    }
}
