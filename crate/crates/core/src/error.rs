use thiserror::Error;

/// Everything that can go wrong in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}x{expected}, got {rows}x{cols}")]
    Shape {
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("matrix is not Hermitian (defect {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not positive definite (min eig {min:.3e}, max eig {max:.3e})")]
    NotPositiveDefinite { min: f64, max: f64 },
    #[error("matrix is numerically singular (condition estimate {0:.3e})")]
    Singular(f64),
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),
    #[error("unknown generator name `{0}`")]
    UnknownGenerator(String),
    #[error("representation invalid: {0}")]
    Representation(String),
    #[error("singular data invalid: {0}")]
    SingularData(String),
    #[error("residue sum of slot {slot} is {sum:.3e}, must vanish")]
    ResidueSum { slot: usize, sum: f64 },
    #[error("residue ratios of slot {slot} are not rational with denominator <= {bound}")]
    NotRational { slot: usize, bound: u32 },
    #[error("puncture collars overlap: {0}")]
    OverlappingCollars(String),
    #[error("evaluation at a pole")]
    AtPole,
    #[error("geometry invalid: {0}")]
    Geometry(String),
    #[error("mesh generation failed: {0}")]
    Mesh(String),
    #[error("start field not admissible: {0}")]
    NotAdmissible(String),
    #[error("unsupported rank {0} (supported: 1..=4)")]
    UnsupportedRank(usize),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of the iterative solvers.
#[derive(Debug, Error)]
pub enum SolveError {
    #[error("energy increased by {increase:.3e} during {stage}")]
    EnergyIncrease { stage: String, increase: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("step underflow at node {node}")]
    StepUnderflow { node: usize },
    #[error("non-finite value encountered at node {0}")]
    NonFinite(usize),
    #[error("energy not finite: {0}")]
    InfiniteEnergy(String),
    #[error(transparent)]
    Setup(#[from] Error),
}
