//! Bregman-divergence Arimoto-Blahut iteration, its baselines, and a
//! rate-distortion solver built on top of them.

pub mod bregman;
pub mod error;
mod newton;
pub mod potentials;
pub mod rd;
pub mod settings;
pub mod solver;

pub use bregman::{
    bregman_divergence, canonicalize, dual_divergence, e_project, e_project_with, fd_hessian, gradient_fd_error,
    legendre_value, mixture_to_natural, mixture_to_natural_with, natural_to_mixture, ComposedPotential,
    ConvexPotential, GenericPotential, MixtureFamily, MixturePoint, NaturalPoint, QuadraticPotential,
};
pub use error::{Error, Result};
pub use potentials::{
    make_log_partition_system, make_quadratic_system, FeatureBasis, LogPartitionSystem, QuadraticFeatureSystem,
};
pub use rd::{
    build_rd_basis, em_objective_general, em_solve, em_solve_newton, em_solve_with, expected_distortion, f_hat,
    interior_start, joint_from_eta, m_project_product, mutual_information, rd_objective, rd_omega, rd_solve_minfree,
    rd_solve_mirror, ConditionalDistribution, DiscreteDistribution, EmOptions, JointTable, MixtureSpec, RdBasis,
    RdProblem, RdSolution, Schedule,
};
pub use settings::NumericSettings;
pub use solver::{
    ab_solve, ab_step, d_omega, estimate_gamma, extended_objective, f_gamma, mirror_solve, mirror_step,
    objective_value, IterationTrace, MixtureForm, MixtureObjective, Objective, QuadraticMixtureForm, SolveResult,
    SolverConfig, Termination, TraceRow,
};
