//! Receding-horizon centralized MPC steering a grid to a new setpoint under a
//! tight input bound.

use nalgebra::{DMatrix, DVector};
use sls_grid::mpc::{CentralizedMpc, MpcProblem};
use sls_grid::opf::setpoint_schedule;
use sls_grid::optimization::AdmmConfig;
use sls_grid::plant::{LocalityMask, PlantModel};

fn main() -> sls_grid::Result<()> {
    let plant = PlantModel::generate(3, 3, 21, 0.2, 1.0)?;
    let (n, p) = (plant.state_dim(), plant.input_dim());
    let target = setpoint_schedule(&plant, 4, 1.0, 1)?.remove(0);
    let u_max = 1.2 * target.u_star.amax().max(0.2);

    let mut problem = MpcProblem::new(&plant, 15, LocalityMask::full(n, p), DMatrix::identity(n, n), DMatrix::identity(p, p), u_max)?;
    problem.set_setpoint(target.x_star.clone(), target.u_star.clone())?;
    let mut solver = CentralizedMpc::new(&problem, AdmmConfig::default())?;

    let mut x = DVector::zeros(n);
    for t in 0..40 {
        let (plan, stats) = solver.solve(&problem, &x)?;
        if t % 5 == 0 {
            println!(
                "t = {t:>2}: error {:.4}, plan cost {:8.4}, max |u| {:.3} / {u_max:.3}, {} iterations",
                (&x - &target.x_star).amax(),
                problem.plan_cost(&plan),
                plan.inputs[0].amax(),
                stats.iterations
            );
        }
        x = plant.system().step(&x, &plan.inputs[0], &DVector::zeros(n))?;
    }
    println!("final error {:.2e}", (&x - &target.x_star).amax());
    Ok(())
}
