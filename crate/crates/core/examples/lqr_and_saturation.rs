//! Stationary LQR on an unstable grid with and without actuator limits.
//! A clamp below the peak demand can leave the clamped gain stuck in windup.

use nalgebra::{DMatrix, DVector};
use sls_grid::baseline::{linear_tracking_step, lqr_riccati, saturate, stationary_lqr};
use sls_grid::opf::setpoint_schedule;
use sls_grid::plant::PlantModel;

fn main() -> sls_grid::Result<()> {
    let plant = PlantModel::generate(4, 4, 9, 0.2, 1.0)?;
    let sys = plant.system();
    let (n, p) = (plant.state_dim(), plant.input_dim());
    let (q, r) = (DMatrix::identity(n, n), DMatrix::identity(p, p));
    println!("open-loop spectral radius {:.4}", plant.spectral_radius()?);

    let lqr = stationary_lqr(sys, &q, &r)?;
    let a_cl = &sys.a - &sys.b * lqr.first_gain();
    println!("closed-loop spectral radius {:.4}", sls_grid::plant::spectral_radius_of(&a_cl)?);
    println!("stationary cost-to-go trace {:.6}", lqr.value_matrices[0].trace());
    for horizon in [5, 20, 80] {
        let finite = lqr_riccati(sys, &q, &r, horizon)?;
        println!("  horizon {horizon:>2}: first-gain distance to stationary {:.2e}", (finite.first_gain() - lqr.first_gain()).amax());
    }

    let target = setpoint_schedule(&plant, 1, 1.0, 1)?.remove(0);
    let (x_ref, u_ref) = (&target.x_star, &target.u_star);
    let run = |u_max: f64| -> sls_grid::Result<(f64, f64, f64)> {
        let mut x = DVector::zeros(n);
        let (mut peak_x, mut peak_u) = (0.0f64, 0.0f64);
        for _ in 0..200 {
            let u = saturate(&linear_tracking_step(&lqr, &x, x_ref, u_ref), u_max);
            peak_u = peak_u.max(u.amax());
            x = sys.step(&x, &u, &DVector::zeros(n))?;
            peak_x = peak_x.max(x.amax());
        }
        Ok(((&x - x_ref).amax(), peak_x, peak_u))
    };
    let (_, _, peak_u) = run(f64::INFINITY)?;
    let hold = 1.05 * u_ref.amax();
    for u_max in [f64::INFINITY, 0.5 * peak_u, (0.1 * peak_u).max(hold)] {
        let (err, peak_x, _) = run(u_max)?;
        println!("u_max {u_max:>7.3}: final tracking error {err:.3e}, peak |x| {peak_x:.3e}");
    }
    Ok(())
}
