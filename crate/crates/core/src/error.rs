use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("projection did not converge after {iterations} cycles (residual {residual:e})")]
    ProjectionDidNotConverge { residual: f64, iterations: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("inner iteration diverged at t = {iteration}")]
    Diverged { iteration: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate fit: all residuals below {floor:e}")]
    DegenerateFit { floor: f64 },

    #[error("projection is not differentiable here: coordinate {index} is {distance:e} from an activity boundary")]
    NonsmoothPoint { index: usize, distance: f64 },

    #[error("no analytic projection Jacobian for {0}")]
    UnsupportedAnalytic(String),

    #[error("activity pattern changes within the finite-difference stencil along coordinate {coordinate}")]
    NonsmoothNeighborhood { coordinate: usize },

    #[error("unsupported dimension {0} (at most 3)")]
    UnsupportedDimension(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
