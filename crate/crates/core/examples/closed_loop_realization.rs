//! Runs a synthesized response as a controller and checks the closed loop
//! against the convolution of the response with the disturbances.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sls_grid::plant::PlantModel;
use sls_grid::sls::{synthesize_h2, SlsController};

fn main() -> sls_grid::Result<()> {
    let plant = PlantModel::generate(3, 4, 7, 0.2, 1.0)?;
    let (n, p) = (plant.state_dim(), plant.input_dim());
    let horizon = 12;
    let resp = synthesize_h2(&plant, horizon, &plant.locality_mask(2), &DMatrix::identity(n, n), &DMatrix::identity(p, p))?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let normal = Normal::new(0.0, 0.1).unwrap();
    let steps = 40;
    let w: Vec<DVector<f64>> = (0..steps).map(|_| DVector::from_fn(n, |_, _| normal.sample(&mut rng))).collect();

    let mut ctrl = SlsController::new(resp.clone(), &DVector::zeros(n));
    let mut x = DVector::zeros(n);
    let mut worst = 0.0f64;
    for t in 0..steps {
        let u = ctrl.step(&x);
        // x(t) = sum_k Phi_x(k) w(t - k), u(t) likewise.
        let mut x_conv = DVector::zeros(n);
        let mut u_conv = DVector::zeros(p);
        for k in 1..=horizon.min(t) {
            x_conv += &resp.phi_x[k - 1] * &w[t - k];
            u_conv += &resp.phi_u[k - 1] * &w[t - k];
        }
        worst = worst.max((&x - x_conv).amax()).max((&u - u_conv).amax());
        x = plant.system().step(&x, &u, &w[t])?;
    }
    println!("{steps} steps, largest deviation from the convolution: {worst:.2e}");
    println!("final |x|_inf = {:.4}", x.amax());
    Ok(())
}
