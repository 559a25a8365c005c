//! Dense and structured convex solvers shared by synthesis and MPC.

mod admm;
mod box_qp;
mod kkt;
mod sparse;

pub use admm::{admm_two_block, AdmmOutcome, AdmmState};
pub use box_qp::{solve_box_qp, BoxQpSolution, BoxQpSolver, QpProblem};
pub use kkt::{solve_eq_ls, KktFactor};
pub use sparse::SparseMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmConfig {
    pub rho: f64,
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub max_iters: usize,
    /// Let the two-block splitting rebalance `rho` when one residual lags far
    /// behind the other. The box-QP solver keeps its own fixed schedule.
    pub adaptive_rho: bool,
    /// Over-relaxation factor of the two-block splitting, in `(0, 2)`.
    pub relaxation: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            eps_primal: 1e-4,
            eps_dual: 1e-4,
            max_iters: 5000,
            adaptive_rho: true,
            relaxation: 1.6,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rho > 0.0
            && self.eps_primal > 0.0
            && self.eps_dual > 0.0
            && self.max_iters > 0
            && self.relaxation > 0.0
            && self.relaxation < 2.0
        {
            Ok(())
        } else {
            Err(Error::param(format!("ADMM settings must be positive: {self:?}")))
        }
    }
}
