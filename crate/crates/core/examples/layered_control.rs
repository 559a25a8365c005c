//! The two-layer controller: localized MPC replans every `T_MPC` steps, and a
//! localized SLS feedback tracks the plan in between.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sls_grid::layered::{count_online_solves, layered_step, LayeredController};
use sls_grid::mpc::MpcProblem;
use sls_grid::opf::setpoint_schedule;
use sls_grid::optimization::AdmmConfig;
use sls_grid::plant::PlantModel;
use sls_grid::sls::synthesize_h2;

fn main() -> sls_grid::Result<()> {
    let (horizon, t_mpc, d) = (20, 20, 2);
    let plant = PlantModel::generate(4, 4, 17, 0.2, 1.0)?;
    let (n, p) = (plant.state_dim(), plant.input_dim());
    let (q, r) = (DMatrix::identity(n, n), DMatrix::identity(p, p));
    let schedule = setpoint_schedule(&plant, 5, 1.0, 3)?;
    let u_max = 1.1 * schedule.iter().map(|s| s.u_star.amax()).fold(0.3, f64::max);

    let mask = plant.locality_mask(d);
    let bottom = synthesize_h2(&plant, horizon, &mask, &q, &r)?;
    let problem = MpcProblem::new(&plant, horizon, mask, q, r, u_max)?;
    let mut ctrl = LayeredController::new(problem, AdmmConfig::default(), Some(&bottom), plant.topology(), d, t_mpc, true)?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut x = DVector::zeros(n);
    let steps = t_mpc * schedule.len();
    for t in 0..steps {
        let period = t / t_mpc;
        let new_sp = (t % t_mpc == 0).then(|| &schedule[period]);
        let u = layered_step(&mut ctrl, &x, new_sp)?;
        let w = DVector::from_fn(n, |i, _| if i % 2 == 1 { noise.sample(&mut rng) } else { 0.0 });
        x = plant.system().step(&x, &u, &w)?;
        if t % t_mpc == t_mpc - 1 {
            let stats = ctrl.last_solve_stats();
            println!(
                "period {period}: tracking error {:.4}, last replan took {} iterations, max feedback {:.2e}",
                (&x - &schedule[period].x_star).amax(),
                stats.iterations,
                ctrl.last_telemetry().map_or(0.0, |tm| tm.feedback.amax())
            );
        }
    }
    println!(
        "{} steps, {} online MPC solves, {} degraded periods",
        steps,
        count_online_solves(&ctrl, steps),
        ctrl.degraded_periods()
    );
    Ok(())
}
