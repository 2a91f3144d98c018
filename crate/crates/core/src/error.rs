use thiserror::Error;

/// Failures raised by the numerical modules.
///
/// Variants split into two families: input validation (bad shapes,
/// parameters outside their domain) and numerical failures (divergence,
/// loss of positivity). [`WyfError::is_validation`] tells them apart.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum WyfError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("field length {got} does not match node count {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("grid too small: {0}")]
    GridTooSmall(String),
    #[error("phi0 is not resolved on the grid: {fraction:.3e} of its spectral energy sits in the top third")]
    Aliasing { fraction: f64 },
    #[error("stiffness matrix rejected: {0}")]
    BadStiffness(String),
    #[error("conformal factor is not positive at node {index} (value {value:e})")]
    NonPositive { index: usize, value: f64 },
    #[error("base is not CWSC: sup|R - r| = {deviation:e} exceeds {tolerance:e}")]
    NotCwsc { deviation: f64, tolerance: f64 },
    #[error("base is not unit volume: volume = {volume}")]
    NotUnitVolume { volume: f64 },
    #[error("direction is not in the kernel: projection residual {residual:e}")]
    NotInKernel { residual: f64 },
    #[error("finite difference step underflow: difference {diff:e} below noise level {floor:e}")]
    StepUnderflow { diff: f64, floor: f64 },
    #[error("stiffness failure at t = {t}: {rejections} consecutive step rejections")]
    StiffnessFailure { t: f64, rejections: usize },
    #[error("r increased by {increase:e} at t = {t} (relative tolerance exceeded)")]
    NonMonotone { t: f64, increase: f64 },
    #[error("linear solver did not converge: residual {residual:e} after {iterations} iterations")]
    LinearSolver { residual: f64, iterations: usize },
    #[error("eigensolve failed: {0}")]
    Eigensolve(String),
    #[error("kernel consists of the scale direction only")]
    ScaleOnlyKernel,
    #[error("kernel is trivial; the critical point is nondegenerate")]
    EmptyKernel,
    #[error("trust radius exceeded: |v| = {norm} > {radius}")]
    TrustRadius { norm: f64, radius: f64 },
    #[error("Newton iteration diverged: residual {residual:e} after {iterations} iterations")]
    NewtonDivergence { residual: f64, iterations: usize },
    #[error("order detection failed: {0}")]
    OrderDetection(String),
    #[error("leading term is not positive at its maximizer: F_p(v_hat) = {value:e}")]
    NotAdamsSimon { value: f64 },
    #[error("ill-posed forcing: {0}")]
    IllPosed(String),
    #[error("contraction factor {rho} is not below 1; increase T")]
    NoContraction { rho: f64 },
    #[error("fixed point iteration reached the cap of {iterations} iterations (last difference {difference:e})")]
    IterationCap { iterations: usize, difference: f64 },
    #[error("rate fit failed: {0}")]
    Fit(String),
}

impl WyfError {
    /// True for errors caused by invalid input rather than numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            WyfError::InvalidConfig(_)
                | WyfError::ShapeMismatch { .. }
                | WyfError::GridTooSmall(_)
                | WyfError::Aliasing { .. }
                | WyfError::BadStiffness(_)
                | WyfError::NotInKernel { .. }
                | WyfError::ScaleOnlyKernel
                | WyfError::EmptyKernel
                | WyfError::IllPosed(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, WyfError>;
