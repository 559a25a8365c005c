//! Distributed localized MPC compared with the centralized solution of the same
//! problem, first with an all-true mask and then with a 2-hop mask.

use nalgebra::{DMatrix, DVector};
use sls_grid::mpc::{mpc_solve_centralized, mpc_solve_localized, MpcProblem};
use sls_grid::optimization::AdmmConfig;
use sls_grid::plant::{LocalityMask, PlantModel};

fn main() -> sls_grid::Result<()> {
    let plant = PlantModel::generate(3, 3, 8, 0.2, 1.0)?;
    let (n, p) = (plant.state_dim(), plant.input_dim());
    let x_now = DVector::from_fn(n, |i, _| if i % 2 == 0 { 0.3 * ((i as f64) * 0.7).cos() } else { 0.0 });
    let weights = (DMatrix::identity(n, n), DMatrix::identity(p, p));
    let u_max = 0.4;

    let full = MpcProblem::new(&plant, 10, LocalityMask::full(n, p), weights.0.clone(), weights.1.clone(), u_max)?;
    let central = mpc_solve_centralized(&full, &x_now)?;
    println!("centralized cost        {:.6}", full.plan_cost(&central));

    let tight = AdmmConfig {
        eps_primal: 1e-6,
        eps_dual: 1e-6,
        max_iters: 20_000,
        ..AdmmConfig::default()
    };
    let (plan, _, iters) = mpc_solve_localized(&full, &x_now, &tight)?;
    println!("localized, full mask    {:.6}  ({iters} iterations)", full.plan_cost(&plan));

    let local = MpcProblem::new(&plant, 10, plant.locality_mask(2), weights.0, weights.1, u_max)?;
    let (plan, resp, iters) = mpc_solve_localized(&local, &x_now, &AdmmConfig::default())?;
    println!(
        "localized, d = 2        {:.6}  ({iters} iterations, support violation {:.1e})",
        local.plan_cost(&plan),
        resp.support_violation(&local.mask.state_support, &local.mask.input_support)
    );
    println!("max |u| along the plan  {:.4} (bound {u_max})", plan.inputs.iter().map(|u| u.amax()).fold(0.0, f64::max));
    Ok(())
}
