//! Offline localized H2 synthesis on a random 5x5 grid for several locality
//! radii, reporting achievability, sparsity and cost.

use nalgebra::DMatrix;
use sls_grid::plant::{PlantModel, STATES_PER_NODE, UNBOUNDED};
use sls_grid::sls::{synthesize_h2_with, validate_achievability, SynthesisOptions};

fn main() -> sls_grid::Result<()> {
    let plant = PlantModel::generate(5, 5, 42, 0.2, 1.0)?;
    let (n, p) = (plant.state_dim(), plant.input_dim());
    let (q, r) = (DMatrix::identity(n, n), DMatrix::identity(p, p));
    let opts = SynthesisOptions {
        states_per_node: STATES_PER_NODE,
        ..SynthesisOptions::default()
    };
    println!("plant: {} nodes, {} lines, spectral radius {:.4}", plant.node_count(), plant.topology().edges().len(), plant.spectral_radius()?);

    for d in [1, 2, 3, UNBOUNDED] {
        let mask = plant.locality_mask(d);
        let report = synthesize_h2_with(plant.system(), 20, &mask, &q, &r, &opts)?;
        let resp = &report.response;
        let nonzeros: usize = resp.phi_x.iter().map(|m| m.iter().filter(|v| **v != 0.0).count()).sum();
        let label = if d == UNBOUNDED { "inf".to_string() } else { d.to_string() };
        println!(
            "d = {label:>3}: H2 cost {:9.4}  residual {:.1e}  Phi_x density {:5.1}%  {} factorizations, {:.1} ms",
            resp.h2_cost(&q, &r),
            validate_achievability(plant.system(), resp)?,
            100.0 * nonzeros as f64 / (n * n * resp.horizon()) as f64,
            report.factorizations,
            report.wall_time.as_secs_f64() * 1e3
        );
    }
    Ok(())
}
