use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An iterative numerical routine failed (eigensolver, factorization).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A constraint block cannot be satisfied.
    #[error("infeasible constraint block `{block}`: residual {residual:.3e}")]
    Infeasible { block: String, residual: f64 },

    /// A localized column subproblem of the synthesis has no solution.
    #[error("column {column} (node {node}) is infeasible for this locality/horizon: {detail}")]
    InfeasibleColumn {
        column: usize,
        node: usize,
        detail: String,
    },

    #[error(
        "no convergence after {iterations} iterations (primal residual {primal:.3e}, dual residual {dual:.3e})"
    )]
    NotConverged {
        iterations: usize,
        primal: f64,
        dual: f64,
        /// (primal, dual) residual pairs, sampled along the run.
        history: Vec<(f64, f64)>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
