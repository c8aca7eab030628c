use thiserror::Error;

/// Errors raised by the discretization and solver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point {point:?} lies outside the reference cell")]
    OutsideReferenceCell { point: Vec<f64> },

    #[error("non-finite sample {value} at {point:?}")]
    NonFiniteSample { point: Vec<f64>, value: f64 },

    #[error("field does not belong to this space")]
    LayoutMismatch,

    #[error("edge {0} does not belong to this mesh")]
    ForeignEdge(usize),

    #[error("boundary edge {0} has no boundary condition")]
    MissingBoundaryCondition(usize),

    #[error("mobility must be positive, found {value} at dof {dof}")]
    NonPositiveMobility { dof: usize, value: f64 },

    #[error("nonpositive concentration {value} at dof {dof}")]
    NonPositiveConcentration { dof: usize, value: f64 },

    #[error("nonpositive cell average {value} in cell {cell}")]
    NonPositiveCellAverage { cell: usize, value: f64 },

    #[error("incompatible right-hand side: net source {net} (relative {relative})")]
    IncompatibleRhs { net: f64, relative: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("newton did not converge in {iterations} iterations (residual {residual:e}); try dt <= {recommended_dt:e}")]
    NewtonDiverged {
        iterations: usize,
        residual: f64,
        recommended_dt: f64,
    },

    #[error("positivity safeguard exhausted: damping {alpha:e} after {iterations} iterations; try dt <= {recommended_dt:e}")]
    SafeguardExhausted {
        iterations: usize,
        alpha: f64,
        recommended_dt: f64,
    },

    #[error("limiter requires a cell-local (discontinuous) layout")]
    LimiterNeedsCellLocal,

    #[error("expression error: {0}")]
    Expression(String),

    #[error("refinement levels must double: {0}")]
    NonDoubling(String),
}

pub type Result<T, E = PnpError> = std::result::Result<T, E>;
