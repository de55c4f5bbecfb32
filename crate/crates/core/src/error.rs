//! Error types shared across the crate.

use crate::assembly::DiscreteField;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on arguments was violated (bad shapes, out-of-range
    /// parameters, non-finite inputs).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A user-supplied reaction produced a non-finite value. Carries the
    /// offending sample point.
    #[error("reaction evaluation failed at z=({z0}, {z1}), x={x}, |y|={y_mag}: {message}")]
    Evaluation {
        message: String,
        z0: f64,
        z1: f64,
        x: f64,
        y_mag: f64,
    },

    /// A stated hypothesis does not hold on the supplied data.
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    /// The coercivity minimizer converged to a nonpositive margin.
    #[error("coercivity margin nonpositive: c0 = {c0}")]
    MarginNonpositive { c0: f64 },

    /// The Rayleigh-quotient minimizer converged to a sign-changing field.
    /// The first eigenfunction is one-signed, so this flags a solver defect
    /// or bad options rather than a property of the problem.
    #[error("degenerate eigenfunction: node {node} has value {min_value} at convergence")]
    DegenerateEigenfunction { node: usize, min_value: f64 },

    /// Eigen iteration hit the iteration cap; carries the best iterate seen.
    #[error("eigen solver exceeded {max_iter} iterations (best residual {residual_norm:.3e})")]
    EigenMaxIterations {
        max_iter: usize,
        residual_norm: f64,
        best: Box<crate::eigen::EigenPair>,
    },

    /// The inner linear solve failed to reach its residual contract.
    #[error("linear solve failed: {0}")]
    LinearSolveFailed(String),

    /// Newton line search stalled or the iteration cap was hit.
    #[error("newton diverged after {iterations} iterations (residual {residual_norm:.3e})")]
    NewtonDiverged {
        iterations: usize,
        residual_norm: f64,
        last: DiscreteField,
    },

    /// The outer frozen-gradient loop did not converge.
    #[error("picard iteration did not converge after {iterations} iterations (residual {residual_norm:.3e})")]
    PicardNotConverged {
        iterations: usize,
        residual_norm: f64,
        last: DiscreteField,
    },

    /// A converged iterate has a negative part above tolerance. The solution
    /// of the perturbed problem is nonnegative, so this flags a solver or
    /// hypothesis problem.
    #[error("positivity violated: ||u^-||_inf = {negative_part_norm:.3e} > {threshold:.3e}")]
    PositivityViolated {
        negative_part_norm: f64,
        threshold: f64,
        last: DiscreteField,
    },

    /// The continuation iterates trended to zero.
    #[error("collapse detected at step {step} (epsilon = {epsilon:.3e}): iterates trend to zero")]
    CollapseDetected {
        step: usize,
        epsilon: f64,
        records: Vec<crate::solver::TraceRecord>,
    },

    /// An auxiliary solve failed partway through a continuation run.
    #[error("continuation aborted at step {step} (epsilon = {epsilon:.3e}): {source}")]
    ContinuationAborted {
        step: usize,
        epsilon: f64,
        #[source]
        source: Box<Error>,
        records: Vec<crate::solver::TraceRecord>,
    },

    /// Config or CSV text could not be parsed.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// A parsed config value is out of its documented range.
    #[error("validation error for `{field}`: {message}")]
    Validation { field: String, message: String },

    /// An I/O failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
