use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KdvError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("singular factorization (beta = {beta}, L = {l}, N = {n})")]
    SingularFactorization { beta: f64, l: f64, n: usize },
    #[error("singular Laplace kernel at rho = {rho} (|det| = {det:e})")]
    SingularKernel { rho: f64, det: f64 },
    #[error("degenerate advection: beta = {beta} makes every length critical")]
    DegenerateAdvection { beta: f64 },
    #[error("critical set undefined for 1 + beta = {a} < 0")]
    NegativeAdvection { a: f64 },
    #[error("characteristic polynomial has a repeated root at p = {p}")]
    DegenerateRoots { p: f64 },
    #[error("degenerate boundary configuration: {0}")]
    DegenerateBc(String),
    #[error(
        "target is near the unreachable subspace: rel_error = {rel_error:e}, gramian_residual = {gramian_residual:e}, lambda_min = {lambda_min:e}, lambda_max = {lambda_max:e}"
    )]
    NearCriticalTarget {
        rel_error: f64,
        gramian_residual: f64,
        lambda_min: f64,
        lambda_max: f64,
        spectrum: Vec<f64>,
    },
    #[error("fixed-point iteration did not contract after {} iterations", history.len())]
    ContractionFailed { history: Vec<f64> },
    #[error("nonlinear solve blew up at t = {t} (norm growth {growth:.3e}); use smaller data or a finer time step")]
    BlowUp { t: f64, growth: f64 },
    #[error("L = {l} lies within {distance:e} of a critical length")]
    CriticalLength { l: f64, distance: f64 },
    #[error("data norm {norm:e} exceeds the smallness gate {gate:e}")]
    SmallnessGate { norm: f64, gate: f64 },
}

impl KdvError {
    /// Errors that describe the mathematics of the requested run rather than bad input.
    pub fn is_domain(&self) -> bool {
        !matches!(
            self,
            KdvError::InvalidGrid(_) | KdvError::GridMismatch(_) | KdvError::InvalidArgument(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, KdvError>;
