//! Small box-constrained QP solved by operator splitting, with and without an
//! equality constraint.

use nalgebra::{dmatrix, dvector};
use sls_grid::optimization::{solve_box_qp, AdmmConfig, QpProblem};

fn main() -> sls_grid::Result<()> {
    let hessian = dmatrix![4.0, 1.0, 0.0; 1.0, 3.0, 0.5; 0.0, 0.5, 2.0];
    let linear = dvector![-8.0, 3.0, -1.0];
    let mut problem = QpProblem::boxed(hessian, linear, dvector![-1.0, -1.0, -1.0], dvector![1.0, 1.0, 1.0]);
    let config = AdmmConfig::default();

    let (z, iters, (rp, rd)) = solve_box_qp(&problem, &config)?;
    println!("box only:      z = {:.6?}  objective {:.6}  ({iters} iterations, residuals {rp:.1e}/{rd:.1e})", z.as_slice(), problem.objective(&z));

    problem.eq_matrix = dmatrix![1.0, 1.0, 1.0];
    problem.eq_rhs = dvector![0.5];
    let (z, iters, _) = solve_box_qp(&problem, &config)?;
    println!("sum(z) = 0.5:  z = {:.6?}  objective {:.6}  ({iters} iterations)", z.as_slice(), problem.objective(&z));
    Ok(())
}
