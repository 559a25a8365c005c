use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::SimConfig;
use crate::baseline::{linear_tracking_step, saturate, stationary_lqr, LqrSolution};
use crate::error::{Error, Result};
use crate::layered::{count_online_solves, layered_step, LayeredController};
use crate::mpc::{CentralizedMpc, MpcProblem};
use crate::opf::{setpoint_schedule, Setpoint};
use crate::plant::{LocalityMask, PlantModel, STATES_PER_NODE};
use crate::sls::synthesize_h2;

/// The four closed loops compared in every trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    /// Stationary LQR with unlimited actuation; the normalization reference.
    UnsatCenLin,
    /// The same gain with its output clamped.
    SatCenLin,
    /// Centralized MPC solved at every step.
    CenMpc,
    /// Localized MPC every period plus localized SLS tracking.
    LocLayered,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [Self::UnsatCenLin, Self::SatCenLin, Self::CenMpc, Self::LocLayered];

    pub fn name(self) -> &'static str {
        match self {
            Self::UnsatCenLin => "UnsatCenLin",
            Self::SatCenLin => "SatCenLin",
            Self::CenMpc => "CenMPC",
            Self::LocLayered => "LocLayered",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).unwrap()
    }
}

/// Closed-loop record of one controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerRun {
    pub kind: ControllerKind,
    /// `states[t]` is the state before input `inputs[t]` is applied.
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub cost: f64,
    /// Some state entry exceeded the divergence threshold (or stopped being finite).
    pub diverged: bool,
    pub online_solves: usize,
    pub wall_time_s: f64,
    /// Set when the controller failed; the run stops at the failing step.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub u_max: f64,
    pub disturbance_std: f64,
    /// Active setpoint at every step.
    pub setpoints: Vec<Setpoint>,
    /// `disturbances[t]` enters between step `t` and `t + 1`.
    pub disturbances: Vec<DVector<f64>>,
    /// Indexed by [`ControllerKind::index`].
    pub runs: Vec<ControllerRun>,
}

impl TrialResult {
    pub fn run(&self, kind: ControllerKind) -> &ControllerRun {
        &self.runs[kind.index()]
    }

    /// Cost divided by the unsaturated LQR's on the same realization; `0/0` is 1.
    pub fn normalized(&self, kind: ControllerKind) -> f64 {
        let reference = self.run(ControllerKind::UnsatCenLin).cost;
        let cost = self.run(kind).cost;
        if reference == 0.0 && cost == 0.0 {
            1.0
        } else {
            cost / reference
        }
    }

    pub fn sat_stable(&self) -> bool {
        !self.run(ControllerKind::SatCenLin).diverged
    }

    pub fn failed(&self) -> bool {
        self.runs.iter().any(|r| r.error.is_some())
    }

    pub fn errors(&self) -> Vec<String> {
        self.runs
            .iter()
            .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.kind.name())))
            .collect()
    }
}

// Keeps sums of many clamped stages finite.
const STAGE_COST_CAP: f64 = 1e250;

fn stage_cost(q: &DMatrix<f64>, r: &DMatrix<f64>, dx: &DVector<f64>, du: &DVector<f64>) -> f64 {
    let c = dx.dot(&(q * dx)) + du.dot(&(r * du));
    if c.is_finite() {
        c.min(STAGE_COST_CAP)
    } else {
        STAGE_COST_CAP
    }
}

/// Everything shared by the four closed loops of one trial.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// Plant with the calibrated input bound.
    pub plant: PlantModel,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub lqr: LqrSolution,
    /// One setpoint per period.
    pub schedule: Vec<Setpoint>,
    pub disturbances: Vec<DVector<f64>>,
    pub u_max: f64,
    pub disturbance_std: f64,
}

impl Scenario {
    /// Draws plant, load profiles and disturbances from independent streams
    /// of `seed` and calibrates the input bound and noise level.
    pub fn generate(config: &SimConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        build_scenario(config, seed)
    }

    pub fn setpoint_at(&self, t: usize, t_mpc: usize) -> &Setpoint {
        &self.schedule[t / t_mpc]
    }
}

/// Input magnitudes of the unsaturated LQR driving the plant from rest to the
/// first setpoint without disturbance: `(peak, rms)`.
fn calibration_run(plant: &PlantModel, lqr: &LqrSolution, target: &Setpoint, steps: usize) -> (f64, f64) {
    let sys = plant.system();
    let mut x = DVector::zeros(plant.state_dim());
    let (mut peak, mut sq, mut count) = (0.0f64, 0.0, 0usize);
    for _ in 0..steps {
        let u = linear_tracking_step(lqr, &x, &target.x_star, &target.u_star);
        peak = peak.max(u.amax());
        sq += u.norm_squared();
        count += u.len();
        x = &sys.a * &x + &sys.b * &u;
    }
    (peak, (sq / count.max(1) as f64).sqrt())
}

fn build_scenario(config: &SimConfig, seed: u64) -> Result<Scenario> {
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let (plant_seed, load_seed, noise_seed) = (seeds.next_u64(), seeds.next_u64(), seeds.next_u64());
    let plant = PlantModel::generate_with(config.rows, config.cols, plant_seed, &config.plant_params())?;
    let (q, r) = config.weights();
    let lqr = stationary_lqr(plant.system(), &q, &r)?;
    let schedule = setpoint_schedule(&plant, load_seed, config.setpoint_magnitude, config.num_periods)?;

    let (peak, rms) = calibration_run(&plant, &lqr, &schedule[0], config.t_mpc);
    let u_max = if config.u_max > 0.0 {
        config.u_max
    } else {
        // The bound must still leave room to hold every setpoint.
        let holding = schedule.iter().map(|s| s.u_star.amax()).fold(0.0, f64::max);
        let calibrated = (config.u_max_fraction * peak).max(config.u_max_holding_margin * holding);
        if calibrated > 0.0 {
            calibrated
        } else {
            1.0
        }
    };
    let plant = plant.with_u_max(u_max)?;

    let std = if config.disturbance_relative {
        config.disturbance_std * rms
    } else {
        config.disturbance_std
    };
    let n = plant.state_dim();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let disturbances = if std > 0.0 {
        let normal = Normal::new(0.0, std).map_err(|e| Error::param(e.to_string()))?;
        (0..config.sim_length())
            .map(|_| {
                // Disturbances act on the frequency (swing) rows only.
                DVector::from_fn(n, |i, _| {
                    if i % STATES_PER_NODE == 1 {
                        normal.sample(&mut noise_rng)
                    } else {
                        0.0
                    }
                })
            })
            .collect()
    } else {
        vec![DVector::zeros(n); config.sim_length()]
    };
    Ok(Scenario {
        plant,
        q,
        r,
        lqr,
        schedule,
        disturbances,
        u_max,
        disturbance_std: std,
    })
}

trait Policy {
    /// Input for step `t`; `new_period` marks the first step under a new setpoint.
    fn input(&mut self, t: usize, x: &DVector<f64>, sp: &Setpoint, new_period: bool) -> Result<DVector<f64>>;
    fn online_solves(&self, sim_length: usize) -> usize;
}

struct Linear<'a> {
    lqr: &'a LqrSolution,
    u_max: Option<f64>,
}

impl Policy for Linear<'_> {
    fn input(&mut self, _: usize, x: &DVector<f64>, sp: &Setpoint, _: bool) -> Result<DVector<f64>> {
        let u = linear_tracking_step(self.lqr, x, &sp.x_star, &sp.u_star);
        Ok(match self.u_max {
            Some(bound) => saturate(&u, bound),
            None => u,
        })
    }

    fn online_solves(&self, _: usize) -> usize {
        0
    }
}

struct Centralized {
    problem: MpcProblem,
    solver: CentralizedMpc,
    solves: usize,
}

impl Policy for Centralized {
    fn input(&mut self, _: usize, x: &DVector<f64>, sp: &Setpoint, new_period: bool) -> Result<DVector<f64>> {
        if new_period {
            self.problem.set_setpoint(sp.x_star.clone(), sp.u_star.clone())?;
        }
        let (plan, _) = self.solver.solve(&self.problem, x)?;
        self.solves += 1;
        Ok(plan.inputs[0].clone())
    }

    fn online_solves(&self, _: usize) -> usize {
        self.solves
    }
}

struct Layered(LayeredController);

impl Policy for Layered {
    fn input(&mut self, _: usize, x: &DVector<f64>, sp: &Setpoint, new_period: bool) -> Result<DVector<f64>> {
        layered_step(&mut self.0, x, new_period.then_some(sp))
    }

    fn online_solves(&self, sim_length: usize) -> usize {
        count_online_solves(&self.0, sim_length)
    }
}

fn simulate<'s>(
    kind: ControllerKind,
    config: &SimConfig,
    scenario: &'s Scenario,
    make: impl FnOnce() -> Result<Box<dyn Policy + 's>>,
) -> ControllerRun {
    let start = Instant::now();
    let plant = &scenario.plant;
    let sys = plant.system();
    let mut run = ControllerRun {
        kind,
        states: Vec::with_capacity(config.sim_length()),
        inputs: Vec::with_capacity(config.sim_length()),
        cost: 0.0,
        diverged: false,
        online_solves: 0,
        wall_time_s: 0.0,
        error: None,
    };
    let mut policy = match make() {
        Ok(p) => p,
        Err(e) => {
            run.error = Some(format!("setup: {e}"));
            run.cost = f64::NAN;
            return run;
        }
    };
    let mut x = DVector::zeros(plant.state_dim());
    for t in 0..config.sim_length() {
        let sp = scenario.setpoint_at(t, config.t_mpc);
        let u = match policy.input(t, &x, sp, t % config.t_mpc == 0) {
            Ok(u) => u,
            Err(e) => {
                run.error = Some(format!("step {t}: {e}"));
                run.cost = f64::NAN;
                break;
            }
        };
        run.cost += stage_cost(&scenario.q, &scenario.r, &(&x - &sp.x_star), &(&u - &sp.u_star));
        let next = &sys.a * &x + &sys.b * &u + &scenario.disturbances[t];
        run.states.push(std::mem::replace(&mut x, next));
        run.inputs.push(u);
        if !run.diverged && x.iter().any(|v| !(v.abs() <= config.divergence_threshold)) {
            run.diverged = true;
        }
    }
    run.online_solves = policy.online_solves(config.sim_length());
    run.wall_time_s = start.elapsed().as_secs_f64();
    run
}

fn simulate_kind(kind: ControllerKind, config: &SimConfig, scenario: &Scenario) -> ControllerRun {
    let plant = &scenario.plant;
    let (q, r, u_max) = (&scenario.q, &scenario.r, scenario.u_max);
    let horizon = config.horizon;
    match kind {
        ControllerKind::UnsatCenLin => simulate(kind, config, scenario, || {
            Ok(Box::new(Linear {
                lqr: &scenario.lqr,
                u_max: None,
            }))
        }),
        ControllerKind::SatCenLin => simulate(kind, config, scenario, || {
            Ok(Box::new(Linear {
                lqr: &scenario.lqr,
                u_max: Some(u_max),
            }))
        }),
        ControllerKind::CenMpc => simulate(kind, config, scenario, || {
            let mask = LocalityMask::full(plant.state_dim(), plant.input_dim());
            let problem = MpcProblem::new(plant, horizon, mask, q.clone(), r.clone(), u_max)?;
            let solver = CentralizedMpc::new(&problem, config.admm())?;
            Ok(Box::new(Centralized {
                problem,
                solver,
                solves: 0,
            }))
        }),
        ControllerKind::LocLayered => simulate(kind, config, scenario, || {
            let d = config.locality();
            let mask = plant.locality_mask(d);
            // The bottom layer is synthesized once, before the run.
            let bottom = synthesize_h2(plant, horizon, &mask, q, r)?;
            let problem = MpcProblem::new(plant, horizon, mask, q.clone(), r.clone(), u_max)?;
            let ctrl = LayeredController::new(
                problem,
                config.admm(),
                Some(&bottom),
                plant.topology(),
                d,
                config.t_mpc,
                config.audit,
            )?;
            Ok(Box::new(Layered(ctrl)))
        }),
    }
}

/// Runs all four controllers on one randomly generated scenario.
///
/// Plant, load profiles and disturbances are drawn from independent streams
/// of `seed`, and every controller sees the same realization starting from
/// rest. A controller that fails is recorded as such; the others still run.
pub fn run_trial(config: &SimConfig, seed: u64) -> Result<TrialResult> {
    run_trial_indexed(config, 0, seed)
}

pub(crate) fn run_trial_indexed(config: &SimConfig, trial: usize, seed: u64) -> Result<TrialResult> {
    let scenario = Scenario::generate(config, seed)?;
    let (u_max, std) = (scenario.u_max, scenario.disturbance_std);

    let runs = ControllerKind::ALL
        .iter()
        .map(|&kind| simulate_kind(kind, config, &scenario))
        .collect();

    let setpoints = (0..config.sim_length())
        .map(|t| scenario.setpoint_at(t, config.t_mpc).clone())
        .collect();
    Ok(TrialResult {
        trial,
        seed,
        u_max,
        disturbance_std: std,
        setpoints,
        disturbances: scenario.disturbances,
        runs,
    })
}
