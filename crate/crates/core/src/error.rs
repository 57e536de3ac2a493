use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the simulation and fitting routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A physical parameter is out of its valid domain (negative rate,
    /// non-finite value, zero-duration segment, ...).
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    /// The dead-time solver needs a grid at least 50x finer than the dead
    /// time itself.
    #[error("grid step {step:.3e} s too coarse for dead time {dead_time:.3e} s (need step <= dead_time/50)")]
    GridTooCoarse { step: f64, dead_time: f64 },

    /// The rate generator has a null space of dimension > 1, so the steady
    /// state is not unique and is reported instead of guessed.
    #[error("ambiguous steady state: rate generator null space has dimension > 1")]
    AmbiguousSteadyState,

    /// A trace window reaches outside the available bins.
    #[error("trace range error: {0}")]
    TraceRange(String),

    /// The fit data cannot constrain the model (all-equal abscissae,
    /// too few points, no spread).
    #[error("rank-deficient fit data: {0}")]
    RankDeficient(String),

    /// The optimizer hit its iteration cap. Carries the best parameter
    /// vector seen (natural parameters, in the order documented by the
    /// fit that failed) so partial results stay available.
    #[error("fit did not converge after {iterations} iterations (best RSS {rss:.6e})")]
    NonConvergence {
        iterations: usize,
        rss: f64,
        best: Vec<f64>,
    },

    /// Class characters do not decompose into nonnegative integer
    /// multiplicities, i.e. the input is not a representation.
    #[error("not a representation: {0}")]
    NotARepresentation(String),

    /// Malformed CSV/JSON input. Lines are 1-indexed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// API misuse that is not a physics problem (mismatched data sets,
    /// unknown labels, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A synthesis scenario that cannot produce a measurable signal
    /// (zero peak height, empty delay list, ...).
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
