//! Two-layer controller: localized MPC plans a trajectory once per period and
//! an offline-synthesized localized SLS controller tracks it between replans.

use nalgebra::DVector;

use crate::baseline::saturate;
use crate::error::{Error, Result};
use crate::mpc::{DlmpcSolver, MpcProblem, PlannedTrajectory, SolveStats};
use crate::opf::Setpoint;
use crate::optimization::AdmmConfig;
use crate::plant::{Topology, INPUTS_PER_NODE, STATES_PER_NODE};
use crate::sls::{DistributedRealization, SystemResponse};

/// Per-step record of what the controller did.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredTelemetry {
    pub planned_input: DVector<f64>,
    pub feedback: DVector<f64>,
    pub replanned: bool,
    pub degraded: bool,
}

#[derive(Debug)]
pub struct LayeredController {
    t_mpc: usize,
    problem: MpcProblem,
    top: DlmpcSolver,
    bottom: Option<DistributedRealization>,
    plan: PlannedTrajectory,
    step_in_period: usize,
    steps: usize,
    solve_steps: Vec<usize>,
    degraded_periods: usize,
    last_stats: SolveStats,
    last: Option<LayeredTelemetry>,
}

impl LayeredController {
    /// `bottom` is the offline response used for tracking; `None` applies the
    /// plan open loop. The bottom layer communicates over `d` hops of
    /// `topology`; with `audit` the response is checked to need nothing more.
    pub fn new(
        problem: MpcProblem,
        admm: AdmmConfig,
        bottom: Option<&SystemResponse>,
        topology: &Topology,
        d: usize,
        t_mpc: usize,
        audit: bool,
    ) -> Result<Self> {
        if t_mpc == 0 {
            return Err(Error::param("t_mpc must be at least 1"));
        }
        if problem.horizon < t_mpc {
            return Err(Error::param(format!(
                "MPC horizon {} is shorter than the replanning period {t_mpc}",
                problem.horizon
            )));
        }
        let top = DlmpcSolver::new(&problem, admm)?;
        let bottom = bottom
            .map(|r| DistributedRealization::new(r, topology, d, STATES_PER_NODE, INPUTS_PER_NODE, audit))
            .transpose()?;
        let plan = PlannedTrajectory::hold(problem.x_ref(), problem.u_ref(), problem.horizon);
        Ok(Self {
            t_mpc,
            problem,
            top,
            bottom,
            plan,
            step_in_period: 0,
            steps: 0,
            solve_steps: Vec::new(),
            degraded_periods: 0,
            last_stats: SolveStats::default(),
            last: None,
        })
    }

    pub fn t_mpc(&self) -> usize {
        self.t_mpc
    }

    pub fn problem(&self) -> &MpcProblem {
        &self.problem
    }

    pub fn plan(&self) -> &PlannedTrajectory {
        &self.plan
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Periods in which the top layer failed and the setpoint was held instead.
    pub fn degraded_periods(&self) -> usize {
        self.degraded_periods
    }

    pub fn last_solve_stats(&self) -> SolveStats {
        self.last_stats
    }

    pub fn last_telemetry(&self) -> Option<&LayeredTelemetry> {
        self.last.as_ref()
    }

    pub fn bottom(&self) -> Option<&DistributedRealization> {
        self.bottom.as_ref()
    }

    fn replan(&mut self, x: &DVector<f64>) -> bool {
        self.solve_steps.push(self.steps);
        match self.top.solve(&self.problem, x) {
            Ok((plan, _, stats)) => {
                self.plan = plan;
                self.last_stats = stats;
                false
            }
            Err(_) => {
                // Hold the setpoint and let the bottom layer absorb the error.
                self.plan = PlannedTrajectory::hold(self.problem.x_ref(), self.problem.u_ref(), self.t_mpc);
                self.top.reset();
                self.degraded_periods += 1;
                true
            }
        }
    }
}

/// One control step. At each period boundary the new setpoint (if any) is
/// installed and the top layer replans from `x_measured`; every step the
/// bottom layer adds feedback on the tracking error and the sum is clamped.
///
/// Node `i` only combines its own slice of the plan and state with the
/// disturbance reconstructions of its `d`-hop neighbors.
pub fn layered_step(
    controller: &mut LayeredController,
    x_measured: &DVector<f64>,
    maybe_new_setpoint: Option<&Setpoint>,
) -> Result<DVector<f64>> {
    let c = controller;
    if x_measured.len() != c.problem.system.state_dim() {
        return Err(Error::dim("measured state has the wrong dimension"));
    }
    let boundary = c.step_in_period == 0;
    let mut degraded = false;
    if boundary {
        if let Some(sp) = maybe_new_setpoint {
            c.problem.set_setpoint(sp.x_star.clone(), sp.u_star.clone())?;
        }
        degraded = c.replan(x_measured);
        if let Some(b) = c.bottom.as_mut() {
            b.reset(&DVector::zeros(x_measured.len()));
        }
    }
    let k = c.step_in_period;
    let planned_x = &c.plan.states[k];
    let planned_u = &c.plan.inputs[k];
    let (sx, su) = (STATES_PER_NODE, INPUTS_PER_NODE);
    let mut feedback = DVector::zeros(planned_u.len());
    if let Some(b) = c.bottom.as_mut() {
        for i in 0..b.node_count() {
            let e_i = x_measured.rows(i * sx, sx) - planned_x.rows(i * sx, sx);
            b.observe(i, &e_i);
        }
        for i in 0..b.node_count() {
            let u_i = b.act(i)?;
            feedback.rows_mut(i * su, su).copy_from(&u_i);
        }
    }
    let u = saturate(&(planned_u + &feedback), c.problem.u_max);
    c.last = Some(LayeredTelemetry {
        planned_input: planned_u.clone(),
        feedback,
        replanned: boundary,
        degraded,
    });
    c.steps += 1;
    c.step_in_period = (k + 1) % c.t_mpc;
    Ok(u)
}

/// Top-layer solves performed during the first `sim_length` steps.
pub fn count_online_solves(controller: &LayeredController, sim_length: usize) -> usize {
    controller.solve_steps.iter().filter(|&&s| s < sim_length).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::mpc_solve_localized;
    use crate::opf::setpoint_schedule;
    use crate::plant::PlantModel;
    use crate::sls::synthesize_h2;
    use nalgebra::DMatrix;

    fn setup(t: usize, t_mpc: usize, with_bottom: bool) -> (PlantModel, LayeredController) {
        let plant = PlantModel::generate(3, 3, 6, 0.2, 2.0).unwrap();
        let (n, p) = (plant.state_dim(), plant.input_dim());
        let (q, r) = (DMatrix::identity(n, n), DMatrix::identity(p, p));
        let mask = plant.locality_mask(2);
        let problem = MpcProblem::new(&plant, t, mask.clone(), q.clone(), r.clone(), plant.u_max()).unwrap();
        let bottom = synthesize_h2(&plant, t, &mask, &q, &r).unwrap();
        let ctrl = LayeredController::new(
            problem,
            AdmmConfig::default(),
            with_bottom.then_some(&bottom),
            plant.topology(),
            2,
            t_mpc,
            true,
        )
        .unwrap();
        (plant, ctrl)
    }

    #[test]
    fn undisturbed_run_follows_plan() {
        let (plant, mut ctrl) = setup(10, 10, true);
        let sp = &setpoint_schedule(&plant, 1, 0.5, 1).unwrap()[0];
        let mut x = DVector::zeros(plant.state_dim());
        for t in 0..10 {
            let u = layered_step(&mut ctrl, &x, (t == 0).then_some(sp)).unwrap();
            assert!((&x - &ctrl.plan().states[t]).amax() < 1e-9);
            assert!(ctrl.last_telemetry().unwrap().feedback.amax() < 1e-9);
            x = plant.system().step(&x, &u, &DVector::zeros(plant.state_dim())).unwrap();
        }
        assert_eq!(count_online_solves(&ctrl, 10), 1);
    }

    #[test]
    fn unit_period_without_bottom_is_receding_dlmpc() {
        let (plant, mut ctrl) = setup(6, 1, false);
        let sp = setpoint_schedule(&plant, 2, 0.5, 1).unwrap().remove(0);
        let mut reference = ctrl.problem().clone();
        reference.set_setpoint(sp.x_star.clone(), sp.u_star.clone()).unwrap();
        let mut x = DVector::zeros(plant.state_dim());
        for t in 0..4 {
            let u = layered_step(&mut ctrl, &x, (t == 0).then_some(&sp)).unwrap();
            let (plan, _, _) = mpc_solve_localized(&reference, &x, &AdmmConfig::default()).unwrap();
            assert!((&u - &plan.inputs[0]).amax() < 1e-3, "step {t}");
            x = plant.system().step(&x, &u, &DVector::zeros(plant.state_dim())).unwrap();
        }
        assert_eq!(count_online_solves(&ctrl, 4), 4);
    }

    #[test]
    fn inputs_respect_the_bound() {
        let (plant, mut ctrl) = setup(8, 4, true);
        let sps = setpoint_schedule(&plant, 3, 1.0, 3).unwrap();
        let mut x = DVector::zeros(plant.state_dim());
        for t in 0..12 {
            let sp = (t % 4 == 0).then(|| &sps[t / 4]);
            let u = layered_step(&mut ctrl, &x, sp).unwrap();
            assert!(u.amax() <= plant.u_max());
            let w = DVector::from_fn(plant.state_dim(), |i, _| if (i + t) % 3 == 0 { 0.05 } else { -0.02 });
            x = plant.system().step(&x, &u, &w).unwrap();
        }
        assert_eq!(count_online_solves(&ctrl, 12), 3);
        assert_eq!(count_online_solves(&ctrl, 5), 2);
        assert_eq!(count_online_solves(&ctrl, 0), 0);
    }
}
