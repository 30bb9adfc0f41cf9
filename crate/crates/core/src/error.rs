use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-positive Jacobian {det:e} in element {element}")]
    NonPositiveJacobian { element: usize, det: f64 },

    #[error("stiffness matrix is singular; unconstrained rigid-body modes? {0}")]
    SingularSystem(String),

    #[error("solver residual {residual:e} exceeds tolerance {tolerance:e}")]
    SolverAccuracy { residual: f64, tolerance: f64 },

    #[error("patch {node} recovery failed: {reason}")]
    PatchFit { node: usize, reason: String },

    #[error("corner of opening {opening} has no singular {mode} eigenvalue in (0, 1]")]
    NonSingular { opening: f64, mode: &'static str },

    #[error("field evaluated at the singular point")]
    AtSingularPoint,

    #[error("extraction annulus is not contained in the domain: {0}")]
    ExtractionDomain(String),

    #[error("region mismatch: {0}")]
    Region(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
