//! Setpoint generation: random load profiles, a DC optimal power flow for the
//! phase angles, and the steady input that holds the resulting state.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimization::solve_eq_ls;
use crate::plant::{PlantModel, Topology, STATES_PER_NODE};

/// Net power injection per node (positive: generation site, negative: load).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub net_injection: Vec<f64>,
}

/// Equilibrium to track: phases from the power flow, zero frequencies, and the
/// input that holds them.
#[derive(Debug, Clone, PartialEq)]
pub struct Setpoint {
    pub x_star: DVector<f64>,
    pub u_star: DVector<f64>,
}

impl Setpoint {
    pub fn origin(state_dim: usize, input_dim: usize) -> Self {
        Self {
            x_star: DVector::zeros(state_dim),
            u_star: DVector::zeros(input_dim),
        }
    }

    pub fn phases(&self) -> Vec<f64> {
        self.x_star.iter().step_by(STATES_PER_NODE).copied().collect()
    }
}

/// I.i.d. uniform injections on `[-magnitude, magnitude]`, shifted to sum to zero.
pub fn sample_load_profile(topology: &Topology, seed: u64, magnitude: f64) -> Result<LoadProfile> {
    if !(magnitude >= 0.0) || !magnitude.is_finite() {
        return Err(Error::param(format!("load magnitude must be finite and non-negative, got {magnitude}")));
    }
    let n = topology.node_count();
    if magnitude == 0.0 || n == 0 {
        return Ok(LoadProfile {
            net_injection: vec![0.0; n],
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inj: Vec<f64> = (0..n).map(|_| rng.random_range(-magnitude..=magnitude)).collect();
    let mean = inj.iter().sum::<f64>() / n as f64;
    inj.iter_mut().for_each(|v| *v -= mean);
    Ok(LoadProfile { net_injection: inj })
}

/// Susceptance-weighted graph Laplacian; `susceptance` is indexed like
/// `topology.edges()`.
pub fn laplacian(topology: &Topology, susceptance: &[f64]) -> Result<DMatrix<f64>> {
    if susceptance.len() != topology.edges().len() {
        return Err(Error::dim(format!(
            "{} susceptances for {} lines",
            susceptance.len(),
            topology.edges().len()
        )));
    }
    let n = topology.node_count();
    let mut l = DMatrix::zeros(n, n);
    for (&(i, j), &b) in topology.edges().iter().zip(susceptance) {
        l[(i, i)] += b;
        l[(j, j)] += b;
        l[(i, j)] -= b;
        l[(j, i)] -= b;
    }
    Ok(l)
}

/// Phase angles of the DC power flow:
///
/// ```text
/// min sum_i g_i^2   s.t.  L theta - g = loads,  theta_0 = 0,  sum g = -sum loads
/// ```
///
/// Returns `(theta, dispatch)`.
pub fn dc_power_flow(topology: &Topology, susceptance: &[f64], loads: &LoadProfile) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = topology.node_count();
    if loads.net_injection.len() != n {
        return Err(Error::dim("load profile does not match the topology"));
    }
    if !topology.is_connected() {
        return Err(Error::Infeasible {
            block: "reduced Laplacian (network is disconnected)".into(),
            residual: f64::INFINITY,
        });
    }
    let l = laplacian(topology, susceptance)?;
    // z = [theta; g]
    let mut weight = DMatrix::zeros(2 * n, 2 * n);
    for i in n..2 * n {
        weight[(i, i)] = 2.0;
    }
    let mut eq = DMatrix::zeros(n + 2, 2 * n);
    eq.view_mut((0, 0), (n, n)).copy_from(&l);
    for i in 0..n {
        eq[(i, n + i)] = -1.0;
        eq[(n + 1, n + i)] = 1.0;
    }
    eq[(n, 0)] = 1.0;
    let mut rhs = DVector::zeros(n + 2);
    rhs.rows_mut(0, n).copy_from(&DVector::from_column_slice(&loads.net_injection));
    rhs[n + 1] = -loads.net_injection.iter().sum::<f64>();
    let z = solve_eq_ls(&weight, &eq, &rhs)?;
    // Flows only see phase differences; pin the reference bus exactly.
    let theta = z.rows(0, n).add_scalar(-z[0]);
    Ok((theta, z.rows(n, n).into_owned()))
}

/// Power flow on the plant's own network, completed into an equilibrium.
pub fn solve_dc_opf(plant: &PlantModel, loads: &LoadProfile) -> Result<Setpoint> {
    let (theta, _) = dc_power_flow(plant.topology(), plant.susceptance(), loads)?;
    let x_star = phase_state(theta.as_slice());
    let u_star = steady_state_input(plant, theta.as_slice())?;
    Ok(Setpoint { x_star, u_star })
}

/// Interleaves phases with zero frequencies.
pub fn phase_state(theta: &[f64]) -> DVector<f64> {
    DVector::from_fn(STATES_PER_NODE * theta.len(), |i, _| {
        if i % STATES_PER_NODE == 0 {
            theta[i / STATES_PER_NODE]
        } else {
            0.0
        }
    })
}

/// Input making `x* = (theta, 0)` a fixed point: the frequency rows of
/// `A x* + B u* = x*` solved for `u*`.
pub fn steady_state_input(plant: &PlantModel, theta: &[f64]) -> Result<DVector<f64>> {
    if theta.len() != plant.node_count() {
        return Err(Error::dim("one phase per node expected"));
    }
    let sys = plant.system();
    let x = phase_state(theta);
    let drift = &sys.a * &x - &x;
    let mut u = DVector::zeros(plant.input_dim());
    for i in 0..plant.node_count() {
        let row = STATES_PER_NODE * i + 1;
        let gain = sys.b[(row, i)];
        assert!(gain != 0.0, "every node actuates its own frequency");
        u[i] = -drift[row] / gain;
    }
    Ok(u)
}

/// Per-period setpoints for one trial. Profile `k` uses `seed + k`.
pub fn setpoint_schedule(plant: &PlantModel, seed: u64, magnitude: f64, periods: usize) -> Result<Vec<Setpoint>> {
    (0..periods as u64)
        .map(|k| solve_dc_opf(plant, &sample_load_profile(plant.topology(), seed.wrapping_add(k), magnitude)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_magnitude_gives_zero_setpoint() {
        let plant = PlantModel::generate(3, 3, 1, 0.2, 1.0).unwrap();
        let loads = sample_load_profile(plant.topology(), 4, 0.0).unwrap();
        assert!(loads.net_injection.iter().all(|&v| v == 0.0));
        let sp = solve_dc_opf(&plant, &loads).unwrap();
        assert_eq!(sp.x_star.amax(), 0.0);
        assert_eq!(sp.u_star.amax(), 0.0);
    }

    #[test]
    fn profiles_balance_and_vary() {
        let topo = Topology::new(5, Topology::mesh_edges(1, 5)).unwrap();
        let a = sample_load_profile(&topo, 1, 2.0).unwrap();
        let b = sample_load_profile(&topo, 2, 2.0).unwrap();
        assert!(a.net_injection.iter().sum::<f64>().abs() < 1e-12);
        assert_ne!(a, b);
        assert!(a.net_injection.iter().all(|v| v.abs() <= 4.0));
    }

    #[test]
    fn two_bus_transfer() {
        let topo = Topology::new(2, [(0, 1)]).unwrap();
        let (b, p) = (0.8, 0.3);
        let loads = LoadProfile {
            net_injection: vec![p, -p],
        };
        let (theta, g) = dc_power_flow(&topo, &[b], &loads).unwrap();
        assert_relative_eq!(theta[0] - theta[1], p / b, epsilon = 1e-12);
        assert_eq!(theta[0], 0.0);
        assert!(g.amax() < 1e-12);
    }

    #[test]
    fn setpoints_are_equilibria() {
        let plant = PlantModel::generate(4, 4, 7, 0.2, 1.0).unwrap();
        for sp in setpoint_schedule(&plant, 3, 1.0, 4).unwrap() {
            let sys = plant.system();
            let resid = (&sys.a * &sp.x_star + &sys.b * &sp.u_star - &sp.x_star).amax();
            assert!(resid <= 1e-12, "{resid}");
            assert!(sp.x_star.iter().skip(1).step_by(2).all(|&w| w == 0.0));
            let l = laplacian(plant.topology(), plant.susceptance()).unwrap();
            let flow = l * DVector::from_vec(sp.phases());
            assert!(flow.sum().abs() < 1e-10);
        }
    }

    #[test]
    fn single_node_needs_no_input() {
        let plant = PlantModel::generate(1, 1, 0, 0.2, 1.0).unwrap();
        assert_eq!(steady_state_input(&plant, &[0.7]).unwrap()[0], 0.0);
    }

    #[test]
    fn disconnected_network_is_rejected() {
        let topo = Topology::new(3, [(0, 1)]).unwrap();
        let loads = LoadProfile {
            net_injection: vec![1.0, 0.0, -1.0],
        };
        assert!(dc_power_flow(&topo, &[1.0], &loads).is_err());
    }
}
