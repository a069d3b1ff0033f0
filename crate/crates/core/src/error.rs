use thiserror::Error;

/// Errors raised by the game model, the solvers and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid game specification: {0}")]
    InvalidSpec(String),

    #[error("invalid feasible set: {0}")]
    InvalidSet(String),

    #[error("leader graph is disconnected")]
    DisconnectedGraph,

    #[error("invalid leader graph: {0}")]
    InvalidGraph(String),

    #[error("injection gain xi[{leader}][{cluster}] = {value} outside (0, {bound})")]
    InjectionGainOutOfBounds {
        leader: usize,
        cluster: usize,
        value: f64,
        bound: f64,
    },

    #[error("modified weight matrix for cluster {cluster} is not contractive (spectral radius {rho})")]
    NotContractive { cluster: usize, rho: f64 },

    #[error("non-finite value at iterate {iteration} of {context}")]
    NonFinite {
        context: &'static str,
        iteration: usize,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("start point is not strictly feasible: {0}")]
    Infeasible(String),

    #[error("line search underflow after {iterations} Newton iterations")]
    LineSearchUnderflow { iterations: usize },

    #[error("{context} did not converge within {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        context: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("game is not linear-quadratic: {0}")]
    NotLinearQuadratic(String),

    #[error("missing smoothness constants: {0:?}")]
    MissingConstants(Vec<&'static str>),

    #[error("iteration bound for {parameter} is infeasible: {reason}")]
    InfeasibleBound {
        parameter: &'static str,
        reason: String,
    },

    #[error("step size {beta} outside the admissible domain [0, {upper}]")]
    StepOutOfDomain { beta: f64, upper: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("outer iteration {outer}: {source}")]
    AtIteration {
        outer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(self, outer: usize) -> Self {
        Error::AtIteration {
            outer,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
