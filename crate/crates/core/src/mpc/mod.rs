//! Receding-horizon control with input saturation: a centralized condensed QP
//! and the distributed, localized variant that optimizes over system
//! responses with a two-copy ADMM splitting.

mod centralized;
mod localized;

pub use centralized::{mpc_solve_centralized, CentralizedMpc};
pub use localized::{mpc_solve_localized, DlmpcSolver};

use nalgebra::{DMatrix, DVector};

use crate::baseline::stationary_lqr;
use crate::error::{Error, Result};
use crate::plant::{LinearSystem, LocalityMask, PlantModel};

/// Tracking MPC data: dynamics, cost weights, input bound and the active
/// setpoint. The terminal weight is the stationary LQR cost-to-go, charged on
/// the state one step past the horizon.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub system: LinearSystem,
    pub horizon: usize,
    pub mask: LocalityMask,
    pub q_weight: DMatrix<f64>,
    pub r_weight: DMatrix<f64>,
    pub terminal_weight: DMatrix<f64>,
    pub u_max: f64,
    x_ref: DVector<f64>,
    u_ref: DVector<f64>,
}

impl MpcProblem {
    /// Problem around the origin; call [`set_setpoint`](Self::set_setpoint) to track something else.
    pub fn new(
        plant: &PlantModel,
        horizon: usize,
        mask: LocalityMask,
        q_weight: DMatrix<f64>,
        r_weight: DMatrix<f64>,
        u_max: f64,
    ) -> Result<Self> {
        Self::for_system(plant.system().clone(), horizon, mask, q_weight, r_weight, u_max)
    }

    /// Same as [`new`](Self::new) for an arbitrary linear system.
    pub fn for_system(
        system: LinearSystem,
        horizon: usize,
        mask: LocalityMask,
        q_weight: DMatrix<f64>,
        r_weight: DMatrix<f64>,
        u_max: f64,
    ) -> Result<Self> {
        let (n, p) = (system.state_dim(), system.input_dim());
        if horizon == 0 {
            return Err(Error::param("MPC horizon must be at least 1"));
        }
        if !(u_max > 0.0) {
            return Err(Error::param(format!("u_max must be positive, got {u_max}")));
        }
        if mask.state_support.shape() != (n, n) || mask.input_support.shape() != (p, n) {
            return Err(Error::dim("locality mask does not match the plant"));
        }
        let terminal_weight = stationary_lqr(&system, &q_weight, &r_weight)?.value_matrices.remove(0);
        Ok(Self {
            system,
            horizon,
            mask,
            q_weight,
            r_weight,
            terminal_weight,
            u_max,
            x_ref: DVector::zeros(n),
            u_ref: DVector::zeros(p),
        })
    }

    pub fn x_ref(&self) -> &DVector<f64> {
        &self.x_ref
    }

    pub fn u_ref(&self) -> &DVector<f64> {
        &self.u_ref
    }

    /// Accepts `(x_ref, u_ref)` only if it is an equilibrium that the input
    /// bound can hold.
    pub fn set_setpoint(&mut self, x_ref: DVector<f64>, u_ref: DVector<f64>) -> Result<()> {
        if x_ref.len() != self.system.state_dim() || u_ref.len() != self.system.input_dim() {
            return Err(Error::dim("setpoint has the wrong dimension"));
        }
        let drift = (&self.system.a * &x_ref + &self.system.b * &u_ref - &x_ref).norm();
        if drift > 1e-8 {
            return Err(Error::param(format!("setpoint is not an equilibrium (drift {drift:.3e})")));
        }
        if let Some(i) = u_ref.iter().position(|u| u.abs() >= self.u_max) {
            return Err(Error::param(format!(
                "steady input {i} = {:.4} cannot be held with u_max = {}",
                u_ref[i], self.u_max
            )));
        }
        self.x_ref = x_ref;
        self.u_ref = u_ref;
        Ok(())
    }

    /// Rolls the inputs out from `x_now` without disturbance.
    pub fn trajectory_from_inputs(&self, x_now: &DVector<f64>, inputs: Vec<DVector<f64>>) -> PlannedTrajectory {
        let mut states = Vec::with_capacity(inputs.len());
        let mut x = x_now.clone();
        for u in &inputs {
            let next = &self.system.a * &x + &self.system.b * u;
            states.push(std::mem::replace(&mut x, next));
        }
        PlannedTrajectory {
            states,
            inputs,
            final_state: x,
        }
    }

    /// `sum_k |x(k) - x_ref|_Q^2 + |u(k) - u_ref|_R^2 + |x(T+1) - x_ref|_P^2`.
    pub fn plan_cost(&self, plan: &PlannedTrajectory) -> f64 {
        let quad = |v: DVector<f64>, w: &DMatrix<f64>| v.dot(&(w * &v));
        let stages: f64 = plan
            .states
            .iter()
            .zip(&plan.inputs)
            .map(|(x, u)| quad(x - &self.x_ref, &self.q_weight) + quad(u - &self.u_ref, &self.r_weight))
            .sum();
        stages + quad(&plan.final_state - &self.x_ref, &self.terminal_weight)
    }

    fn check_state(&self, x_now: &DVector<f64>) -> Result<()> {
        if x_now.len() != self.system.state_dim() {
            return Err(Error::dim("measured state has the wrong dimension"));
        }
        if !x_now.iter().all(|v| v.is_finite()) {
            return Err(Error::param("measured state is not finite"));
        }
        Ok(())
    }
}

/// Predicted open-loop trajectory: `states[0]` is the measured state and
/// `states[k+1] = A states[k] + B inputs[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedTrajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    /// State one step past the last input.
    pub final_state: DVector<f64>,
}

impl PlannedTrajectory {
    /// Plan that sits at an equilibrium for `horizon` steps.
    pub fn hold(x_ref: &DVector<f64>, u_ref: &DVector<f64>, horizon: usize) -> Self {
        Self {
            states: vec![x_ref.clone(); horizon],
            inputs: vec![u_ref.clone(); horizon],
            final_state: x_ref.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Largest `|x(k+1) - A x(k) - B u(k)|` along the plan.
    pub fn dynamics_residual(&self, system: &LinearSystem) -> f64 {
        let next = self.states.iter().skip(1).chain(std::iter::once(&self.final_state));
        self.states
            .iter()
            .zip(&self.inputs)
            .zip(next)
            .map(|((x, u), xn)| (xn - &system.a * x - &system.b * u).amax())
            .fold(0.0, f64::max)
    }
}

/// Solver telemetry returned with every plan.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}
