use nalgebra::{DMatrix, DVector};

use super::{MpcProblem, PlannedTrajectory, SolveStats};
use crate::error::{Error, Result};
use crate::optimization::{AdmmConfig, BoxQpSolver};

/// Condensed tracking QP over input deviations `v_k = u(k) - u_ref`:
///
/// ```text
/// min 1/2 v'Hv + (F dx)'v   s.t.  -u_max - u_ref <= v <= u_max - u_ref
/// ```
///
/// where `dx = x_now - x_ref`. `H` and `F` depend only on the plant and the
/// weights, so one factorization serves every solve.
#[derive(Debug, Clone)]
pub struct CentralizedMpc {
    horizon: usize,
    input_dim: usize,
    gain: DMatrix<f64>,
    solver: BoxQpSolver,
    warm: Option<(DVector<f64>, DVector<f64>)>,
}

impl CentralizedMpc {
    pub fn new(problem: &MpcProblem, config: AdmmConfig) -> Result<Self> {
        let sys = &problem.system;
        let (n, p, t) = (sys.state_dim(), sys.input_dim(), problem.horizon);
        // Rows of block k map to e_{k+1}, k = 1..T.
        let mut su = DMatrix::zeros(n * t, p * t);
        let mut sx = DMatrix::zeros(n * t, n);
        let mut a_pow = sys.a.clone();
        let mut a_pow_b = vec![sys.b.clone()];
        for k in 0..t {
            sx.view_mut((k * n, 0), (n, n)).copy_from(&a_pow);
            for i in 0..=k {
                su.view_mut((k * n, i * p), (n, p)).copy_from(&a_pow_b[k - i]);
            }
            a_pow = &sys.a * &a_pow;
            let next = &sys.a * a_pow_b.last().unwrap();
            a_pow_b.push(next);
        }
        let mut weighted = su.clone();
        for k in 0..t {
            let w = if k + 1 == t { &problem.terminal_weight } else { &problem.q_weight };
            let block = w * su.rows(k * n, n);
            weighted.rows_mut(k * n, n).copy_from(&block);
        }
        let mut hessian = su.transpose() * &weighted;
        for k in 0..t {
            let mut block = hessian.view_mut((k * p, k * p), (p, p));
            block += &problem.r_weight;
        }
        hessian *= 2.0;
        hessian = (&hessian + hessian.transpose()) * 0.5;
        let gain = (weighted.transpose() * &sx) * 2.0;
        Ok(Self {
            horizon: t,
            input_dim: p,
            gain,
            solver: BoxQpSolver::new(hessian, DMatrix::zeros(0, p * t), config)?,
            warm: None,
        })
    }

    pub fn solve(&mut self, problem: &MpcProblem, x_now: &DVector<f64>) -> Result<(PlannedTrajectory, SolveStats)> {
        problem.check_state(x_now)?;
        if problem.horizon != self.horizon || problem.system.input_dim() != self.input_dim {
            return Err(Error::dim("problem does not match the condensed solver"));
        }
        let (p, t) = (self.input_dim, self.horizon);
        let dx = x_now - problem.x_ref();
        let linear = &self.gain * &dx;
        let u_ref = problem.u_ref();
        let lower = DVector::from_fn(p * t, |i, _| -problem.u_max - u_ref[i % p]);
        let upper = DVector::from_fn(p * t, |i, _| problem.u_max - u_ref[i % p]);
        let warm = self.warm.as_ref().map(|(x, y)| (x, y));
        let sol = self.solver.solve(&linear, &DVector::zeros(0), &lower, &upper, warm)?;
        let inputs = (0..t).map(|k| sol.z.rows(k * p, p) + u_ref).collect();
        let plan = problem.trajectory_from_inputs(x_now, inputs);
        let stats = SolveStats {
            iterations: sol.iterations,
            primal_residual: sol.primal_residual,
            dual_residual: sol.dual_residual,
        };
        self.warm = Some((sol.z, sol.duals));
        Ok((plan, stats))
    }
}

/// One-shot centralized solve with default solver settings.
pub fn mpc_solve_centralized(problem: &MpcProblem, x_now: &DVector<f64>) -> Result<PlannedTrajectory> {
    CentralizedMpc::new(problem, AdmmConfig::default())?
        .solve(problem, x_now)
        .map(|(plan, _)| plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::lqr_riccati_with_terminal;
    use crate::plant::{LocalityMask, PlantModel};
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn problem(plant: &PlantModel, t: usize, u_max: f64) -> MpcProblem {
        let (n, p) = (plant.state_dim(), plant.input_dim());
        MpcProblem::new(
            plant,
            t,
            LocalityMask::full(n, p),
            DMatrix::identity(n, n),
            DMatrix::identity(p, p),
            u_max,
        )
        .unwrap()
    }

    #[test]
    fn equilibrium_is_held() {
        let plant = PlantModel::generate(2, 2, 1, 0.2, 1.0).unwrap();
        let mut prob = problem(&plant, 10, 1.0);
        let theta = dvector![0.0, 0.1, -0.05, 0.02];
        let x_ref = DVector::from_fn(8, |i, _| if i % 2 == 0 { theta[i / 2] } else { 0.0 });
        let u_ref = DVector::from_fn(4, |i, _| -(&plant.system().a * &x_ref - &x_ref)[2 * i + 1]);
        prob.set_setpoint(x_ref.clone(), u_ref.clone()).unwrap();
        let plan = mpc_solve_centralized(&prob, &x_ref).unwrap();
        for (x, u) in plan.states.iter().zip(&plan.inputs) {
            assert_relative_eq!(x, &x_ref, epsilon = 1e-9);
            assert_relative_eq!(u, &u_ref, epsilon = 1e-9);
        }
    }

    #[test]
    fn unconstrained_first_input_is_lqr() {
        let plant = PlantModel::generate(2, 2, 5, 0.2, 1.0).unwrap();
        let prob = problem(&plant, 12, 1e6);
        let x0 = DVector::from_fn(8, |i, _| (i as f64 * 0.37).sin());
        let plan = mpc_solve_centralized(&prob, &x0).unwrap();
        let lqr = lqr_riccati_with_terminal(
            plant.system(),
            &prob.q_weight,
            &prob.r_weight,
            &prob.terminal_weight,
            12,
        )
        .unwrap();
        assert_relative_eq!(plan.inputs[0], -&lqr.gains[0] * &x0, epsilon = 1e-6);
        assert!(plan.dynamics_residual(plant.system()) < 1e-12);
    }

    #[test]
    fn saturated_scalar_plan_matches_enumeration() {
        // x+ = x + u, q = r = 1, T = 3, |u| <= 0.5 from x = 3.
        let sys = crate::plant::LinearSystem::new(dmatrix![1.0], dmatrix![1.0]).unwrap();
        let plant_like = scalar_problem(sys, 3, 0.5);
        let plan = mpc_solve_centralized(&plant_like, &dvector![3.0]).unwrap();
        assert_relative_eq!(plan.inputs[0][0], -0.5, epsilon = 1e-9);
        // Brute force over a fine input grid confirms optimality of the plan cost.
        let best = brute_force(&plant_like, 3.0);
        assert!(plant_like.plan_cost(&plan) <= best + 1e-9);
    }

    fn scalar_problem(sys: crate::plant::LinearSystem, t: usize, u_max: f64) -> MpcProblem {
        MpcProblem::for_system(sys, t, LocalityMask::full(1, 1), dmatrix![1.0], dmatrix![1.0], u_max).unwrap()
    }

    fn brute_force(prob: &MpcProblem, x0: f64) -> f64 {
        let grid: Vec<f64> = (0..=100).map(|i| -0.5 + i as f64 * 0.01).collect();
        let mut best = f64::INFINITY;
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    let plan = prob.trajectory_from_inputs(&dvector![x0], vec![dvector![a], dvector![b], dvector![c]]);
                    best = best.min(prob.plan_cost(&plan));
                }
            }
        }
        best
    }
}
