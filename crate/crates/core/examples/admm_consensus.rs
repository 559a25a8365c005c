//! The generic two-block splitting on a toy consensus problem: a quadratic
//! that wants `v = target`, and a projection onto the nonnegative orthant.

use nalgebra::DVector;
use sls_grid::optimization::{admm_two_block, AdmmConfig};

fn main() -> sls_grid::Result<()> {
    let target = DVector::from_vec(vec![2.0, -1.0, 0.5, -3.0]);
    let weights = DVector::from_vec(vec![1.0, 10.0, 0.1, 2.0]);
    for relaxation in [1.0, 1.6] {
        let config = AdmmConfig {
            relaxation,
            ..AdmmConfig::default()
        };
        // prox: argmin_phi sum w_i (phi_i - t_i)^2 / 2 + rho/2 |phi - v|^2
        let prox = |v: &DVector<f64>, rho: f64| {
            Ok(DVector::from_fn(v.len(), |i, _| (weights[i] * target[i] + rho * v[i]) / (weights[i] + rho)))
        };
        let proj = |v: &DVector<f64>| Ok(v.map(|x| x.max(0.0)));
        let out = admm_two_block(prox, proj, target.len(), &config, None)?;
        println!(
            "relaxation {relaxation}: {:?} after {} iterations (final rho {})",
            out.consensus().as_slice(),
            out.iterations,
            out.rho
        );
    }
    Ok(())
}
