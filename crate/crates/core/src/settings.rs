/// Tolerances shared by every inner solver. Every operation that runs a
/// Newton loop takes one of these; `Default` gives the stock values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericSettings {
    /// Gradient-norm tolerance for the damped Newton loops.
    pub newton_tolerance: f64,
    pub newton_max_iterations: usize,
    /// Maximum number of step halvings per Newton iteration.
    pub max_halvings: usize,
    /// Tolerance for `|∂_{d0+j} φ(θ) - c_j|` in membership tests.
    pub membership_tolerance: f64,
    /// Step used when a Hessian is synthesized from gradient differences.
    pub fd_step: f64,
}

impl Default for NumericSettings {
    fn default() -> Self {
        Self {
            newton_tolerance: 1e-12,
            newton_max_iterations: 200,
            max_halvings: 60,
            membership_tolerance: 1e-9,
            fd_step: 1e-6,
        }
    }
}
