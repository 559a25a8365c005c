use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimization::AdmmConfig;
use crate::plant::{PlantParams, UNBOUNDED};

/// Every knob of a simulation or benchmark.
///
/// Stored as a flat key-value TOML file; unknown keys are rejected. Missing
/// keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Mesh rows and columns.
    pub rows: usize,
    pub cols: usize,
    /// Base seed; trial `i` of a benchmark uses `seed + i`.
    pub seed: u64,
    pub dt: f64,
    /// Input bound; `0` means calibrate per trial (see `u_max_fraction`).
    pub u_max: f64,
    /// Calibrated bound as a fraction of the peak input an unsaturated LQR
    /// needs for the first setpoint change.
    pub u_max_fraction: f64,
    /// Calibrated bounds are at least this multiple of the largest input
    /// needed to hold any of the trial's setpoints.
    pub u_max_holding_margin: f64,
    /// Probability of keeping each mesh edge outside the random spanning tree.
    pub extra_edge_prob: f64,
    /// State and input weights are `q_weight * I` and `r_weight * I`.
    pub q_weight: f64,
    pub r_weight: f64,
    /// Response and MPC horizon.
    pub horizon: usize,
    /// Steps between top-layer replans; also the setpoint period.
    pub t_mpc: usize,
    /// Locality radius in hops; negative means unbounded.
    pub d: i64,
    /// Standard deviation of the frequency disturbance per node and step.
    pub disturbance_std: f64,
    /// When true, `disturbance_std` is relative to the RMS input of the
    /// calibration run instead of absolute.
    pub disturbance_relative: bool,
    /// Half-width of the uniform per-node load draw.
    pub setpoint_magnitude: f64,
    pub num_periods: usize,
    pub trials: usize,
    pub admm_rho: f64,
    pub admm_eps_primal: f64,
    pub admm_eps_dual: f64,
    pub admm_max_iters: usize,
    pub admm_adaptive_rho: bool,
    pub admm_relaxation: f64,
    /// `|x|` beyond which a run counts as unstable.
    pub divergence_threshold: f64,
    /// Node whose trajectory is written out; negative picks the mesh center.
    pub probe_node: i64,
    /// Check the information-flow constraints of the layered controller.
    pub audit: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            rows: 5,
            cols: 5,
            seed: 1,
            dt: 0.2,
            u_max: 0.0,
            u_max_fraction: 0.1,
            u_max_holding_margin: 1.05,
            extra_edge_prob: 0.3,
            q_weight: 1.0,
            r_weight: 1.0,
            horizon: 20,
            t_mpc: 20,
            d: 2,
            disturbance_std: 0.05,
            disturbance_relative: true,
            setpoint_magnitude: 1.0,
            num_periods: 5,
            trials: 30,
            admm_rho: 1.0,
            admm_eps_primal: 1e-4,
            admm_eps_dual: 1e-4,
            admm_max_iters: 5000,
            admm_adaptive_rho: true,
            admm_relaxation: 1.6,
            divergence_threshold: 1e6,
            probe_node: -1,
            audit: false,
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    /// Sets one key from its textual value, using the same syntax as the file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table = toml::Table::try_from(&*self).expect("flat config always serializes");
        if !table.contains_key(key) {
            return Err(Error::param(format!("unknown config key `{key}`")));
        }
        let parsed: toml::Value = format!("v = {value}")
            .parse::<toml::Table>()
            .map(|mut t| t.remove("v").unwrap())
            .unwrap_or_else(|_| toml::Value::String(value.to_string()));
        table.insert(key.to_string(), parsed);
        let updated: Self = table
            .try_into()
            .map_err(|e| Error::Parse(format!("config key `{key}`: {e}")))?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("u_max_fraction", self.u_max_fraction),
            ("u_max_holding_margin", self.u_max_holding_margin),
            ("q_weight", self.q_weight),
            ("r_weight", self.r_weight),
            ("admm_rho", self.admm_rho),
            ("admm_eps_primal", self.admm_eps_primal),
            ("admm_eps_dual", self.admm_eps_dual),
            ("admm_relaxation", self.admm_relaxation),
            ("divergence_threshold", self.divergence_threshold),
        ];
        if let Some((k, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::param(format!("`{k}` must be positive, got {v}")));
        }
        let non_negative = [
            ("u_max", self.u_max),
            ("disturbance_std", self.disturbance_std),
            ("setpoint_magnitude", self.setpoint_magnitude),
        ];
        if let Some((k, v)) = non_negative.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::param(format!("`{k}` must be non-negative, got {v}")));
        }
        let counts = [
            ("rows", self.rows),
            ("cols", self.cols),
            ("horizon", self.horizon),
            ("t_mpc", self.t_mpc),
            ("num_periods", self.num_periods),
            ("trials", self.trials),
            ("admm_max_iters", self.admm_max_iters),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::param(format!("`{k}` must be at least 1")));
        }
        if !(0.0..=1.0).contains(&self.extra_edge_prob) {
            return Err(Error::param("`extra_edge_prob` must lie in [0, 1]"));
        }
        if self.u_max_holding_margin <= 1.0 {
            return Err(Error::param("`u_max_holding_margin` must exceed 1"));
        }
        if self.admm_relaxation >= 2.0 {
            return Err(Error::param("`admm_relaxation` must be below 2"));
        }
        if self.t_mpc > self.horizon {
            return Err(Error::param("`t_mpc` cannot exceed `horizon`"));
        }
        if self.probe_node >= (self.rows * self.cols) as i64 {
            return Err(Error::param("`probe_node` is outside the mesh"));
        }
        Ok(())
    }

    pub fn locality(&self) -> usize {
        usize::try_from(self.d).unwrap_or(UNBOUNDED)
    }

    pub fn node_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn sim_length(&self) -> usize {
        self.num_periods * self.t_mpc
    }

    pub fn probe(&self) -> usize {
        usize::try_from(self.probe_node).unwrap_or((self.rows / 2) * self.cols + self.cols / 2)
    }

    pub fn admm(&self) -> AdmmConfig {
        AdmmConfig {
            rho: self.admm_rho,
            eps_primal: self.admm_eps_primal,
            eps_dual: self.admm_eps_dual,
            max_iters: self.admm_max_iters,
            adaptive_rho: self.admm_adaptive_rho,
            relaxation: self.admm_relaxation,
        }
    }

    pub fn plant_params(&self) -> PlantParams {
        PlantParams {
            dt: self.dt,
            u_max: if self.u_max > 0.0 { self.u_max } else { 1.0 },
            extra_edge_prob: self.extra_edge_prob,
            ..PlantParams::default()
        }
    }

    pub fn weights(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        self.weights_for(self.node_count())
    }

    /// `(Q, R)` for a plant with `nodes` nodes.
    pub fn weights_for(&self, nodes: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = nodes;
        (
            DMatrix::identity(2 * n, 2 * n) * self.q_weight,
            DMatrix::identity(n, n) * self.r_weight,
        )
    }
}
