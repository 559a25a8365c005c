//! Load profiles, DC power flow and the equilibrium setpoints derived from it.

use sls_grid::opf::{dc_power_flow, sample_load_profile, setpoint_schedule, solve_dc_opf};
use sls_grid::plant::PlantModel;

fn main() -> sls_grid::Result<()> {
    let plant = PlantModel::generate(3, 3, 5, 0.2, 1.0)?;
    let loads = sample_load_profile(plant.topology(), 11, 1.0)?;
    let (theta, dispatch) = dc_power_flow(plant.topology(), plant.susceptance(), &loads)?;
    println!("injections: {:.3?}", loads.net_injection);
    println!("phases:     {:.3?}", theta.as_slice());
    // Balanced profiles need no extra generation.
    println!("dispatch:   {:.3?}", dispatch.as_slice());
    let flows: Vec<f64> = plant
        .topology()
        .edges()
        .iter()
        .zip(plant.susceptance())
        .map(|(&(i, j), b)| b * (theta[i] - theta[j]))
        .collect();
    println!("line flows: {flows:.3?}");

    let sp = solve_dc_opf(&plant, &loads)?;
    let residual = (&plant.system().a * &sp.x_star + &plant.system().b * &sp.u_star - &sp.x_star).amax();
    println!("setpoint is an equilibrium to {residual:.1e}; holding input {:.3?}", sp.u_star.as_slice());

    for (k, sp) in setpoint_schedule(&plant, 2, 1.0, 4)?.iter().enumerate() {
        println!("period {k}: max |theta*| = {:.3}, max |u*| = {:.3}", sp.x_star.amax(), sp.u_star.amax());
    }
    Ok(())
}
