//! Closed-loop experiments: scenario generation, the four compared
//! controllers, cost accounting across trials, and CSV/SVG reports.

mod config;
mod report;
mod svg;
mod trial;

pub use config::SimConfig;
pub use report::{emit_report, read_costs, render_from_dir, CostRow};
pub use trial::{run_trial, ControllerKind, ControllerRun, Scenario, TrialResult};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Mean normalized costs per controller, over all completed trials and over
/// the trials where the saturated LQR stayed bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    /// Indexed by [`ControllerKind::index`].
    pub total_mean: [f64; 4],
    pub stable_mean: [f64; 4],
    /// Trials that completed for every controller.
    pub trials: usize,
    pub stable_trials: usize,
    /// `(trial, message)` for trials excluded because a controller failed.
    pub failures: Vec<(usize, String)>,
    /// The per-trial rows the means were computed from.
    pub rows: Vec<CostRow>,
}

impl CostReport {
    /// Aggregates per-trial rows; failed rows are excluded from both means.
    pub fn from_rows(rows: &[CostRow]) -> Self {
        let ok: Vec<&CostRow> = rows.iter().filter(|r| r.error.is_empty()).collect();
        let stable: Vec<&CostRow> = ok.iter().copied().filter(|r| r.sat_stable).collect();
        let mean = |set: &[&CostRow]| {
            let mut m = [f64::NAN; 4];
            if !set.is_empty() {
                for (k, slot) in m.iter_mut().enumerate() {
                    *slot = set.iter().map(|r| r.normalized[k]).sum::<f64>() / set.len() as f64;
                }
            }
            m
        };
        Self {
            total_mean: mean(&ok),
            stable_mean: mean(&stable),
            trials: ok.len(),
            stable_trials: stable.len(),
            failures: rows
                .iter()
                .filter(|r| !r.error.is_empty())
                .map(|r| (r.trial, r.error.clone()))
                .collect(),
            rows: rows.to_vec(),
        }
    }

    pub fn total(&self, kind: ControllerKind) -> f64 {
        self.total_mean[kind.index()]
    }

    pub fn stable(&self, kind: ControllerKind) -> f64 {
        self.stable_mean[kind.index()]
    }
}

/// Runs `trials` trials in parallel; trial `i` uses seed `config.seed + i`.
///
/// Setup errors of a whole trial (e.g. an invalid plant) are reported as
/// failed rows rather than aborting the benchmark.
pub fn run_benchmark(config: &SimConfig, trials: usize) -> Result<(CostReport, Vec<TrialResult>)> {
    if trials == 0 {
        return Err(Error::param("benchmark needs at least one trial"));
    }
    config.validate()?;
    let outcomes: Vec<(CostRow, Option<TrialResult>)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let seed = config.seed.wrapping_add(i as u64);
            match trial::run_trial_indexed(config, i, seed) {
                Ok(res) => (CostRow::from_trial(&res), Some(res)),
                Err(e) => (CostRow::failed(i, seed, e.to_string()), None),
            }
        })
        .collect();
    let rows: Vec<CostRow> = outcomes.iter().map(|(r, _)| r.clone()).collect();
    let results = outcomes.into_iter().filter_map(|(_, r)| r).collect();
    Ok((CostReport::from_rows(&rows), results))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_trial_report_is_that_trial() {
        let cfg = SimConfig {
            rows: 2,
            cols: 2,
            horizon: 6,
            t_mpc: 3,
            num_periods: 2,
            ..SimConfig::default()
        };
        let (report, results) = run_benchmark(&cfg, 1).unwrap();
        assert_eq!(report.trials, 1);
        for kind in ControllerKind::ALL {
            assert_eq!(report.total(kind), results[0].normalized(kind));
        }
        assert_eq!(report.total(ControllerKind::UnsatCenLin), 1.0);
    }

    #[test]
    fn failed_rows_are_excluded() {
        let mut good = CostRow::failed(0, 0, String::new());
        good.normalized = [1.0, 2.0, 1.5, 1.6];
        good.sat_stable = false;
        let bad = CostRow::failed(1, 1, "boom".into());
        let report = CostReport::from_rows(&[good, bad]);
        assert_eq!(report.trials, 1);
        assert_eq!(report.stable_trials, 0);
        assert_eq!(report.total_mean, [1.0, 2.0, 1.5, 1.6]);
        assert!(report.stable_mean[0].is_nan());
        assert_eq!(report.failures, vec![(1, "boom".to_string())]);
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(run_benchmark(&SimConfig::default(), 0).is_err());
    }
}
