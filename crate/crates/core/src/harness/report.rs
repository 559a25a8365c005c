use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::svg::{bar_chart, trajectory_panels, Series};
use super::{ControllerKind, CostReport, TrialResult};
use crate::error::Result;
use crate::plant::STATES_PER_NODE;

/// One line of `costs.csv`: normalized costs of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub trial: usize,
    pub seed: u64,
    /// Indexed by [`ControllerKind::index`].
    pub normalized: [f64; 4],
    pub raw: [f64; 4],
    pub sat_stable: bool,
    pub online_solves: [usize; 4],
    pub u_max: f64,
    /// Empty when every controller completed.
    pub error: String,
}

impl CostRow {
    pub fn from_trial(res: &TrialResult) -> Self {
        let all = ControllerKind::ALL;
        Self {
            trial: res.trial,
            seed: res.seed,
            normalized: all.map(|k| res.normalized(k)),
            raw: all.map(|k| res.run(k).cost),
            sat_stable: res.sat_stable(),
            online_solves: all.map(|k| res.run(k).online_solves),
            u_max: res.u_max,
            error: res.errors().join("; "),
        }
    }

    /// Row for a trial that could not be set up at all.
    pub fn failed(trial: usize, seed: u64, error: String) -> Self {
        Self {
            trial,
            seed,
            normalized: [f64::NAN; 4],
            raw: [f64::NAN; 4],
            sat_stable: false,
            online_solves: [0; 4],
            u_max: f64::NAN,
            error,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CostRecord {
    trial: usize,
    seed: u64,
    unsat_cen_lin: f64,
    sat_cen_lin: f64,
    cen_mpc: f64,
    loc_layered: f64,
    sat_cen_lin_stable: bool,
    unsat_cen_lin_raw: f64,
    sat_cen_lin_raw: f64,
    cen_mpc_raw: f64,
    loc_layered_raw: f64,
    cen_mpc_solves: usize,
    loc_layered_solves: usize,
    u_max: f64,
    error: String,
}

impl From<&CostRow> for CostRecord {
    fn from(r: &CostRow) -> Self {
        Self {
            trial: r.trial,
            seed: r.seed,
            unsat_cen_lin: r.normalized[0],
            sat_cen_lin: r.normalized[1],
            cen_mpc: r.normalized[2],
            loc_layered: r.normalized[3],
            sat_cen_lin_stable: r.sat_stable,
            unsat_cen_lin_raw: r.raw[0],
            sat_cen_lin_raw: r.raw[1],
            cen_mpc_raw: r.raw[2],
            loc_layered_raw: r.raw[3],
            cen_mpc_solves: r.online_solves[2],
            loc_layered_solves: r.online_solves[3],
            u_max: r.u_max,
            error: r.error.clone(),
        }
    }
}

impl From<CostRecord> for CostRow {
    fn from(r: CostRecord) -> Self {
        Self {
            trial: r.trial,
            seed: r.seed,
            normalized: [r.unsat_cen_lin, r.sat_cen_lin, r.cen_mpc, r.loc_layered],
            raw: [r.unsat_cen_lin_raw, r.sat_cen_lin_raw, r.cen_mpc_raw, r.loc_layered_raw],
            sat_stable: r.sat_cen_lin_stable,
            online_solves: [0, 0, r.cen_mpc_solves, r.loc_layered_solves],
            u_max: r.u_max,
            error: r.error,
        }
    }
}

const COST_HEADER: [&str; 15] = [
    "trial",
    "seed",
    "unsat_cen_lin",
    "sat_cen_lin",
    "cen_mpc",
    "loc_layered",
    "sat_cen_lin_stable",
    "unsat_cen_lin_raw",
    "sat_cen_lin_raw",
    "cen_mpc_raw",
    "loc_layered_raw",
    "cen_mpc_solves",
    "loc_layered_solves",
    "u_max",
    "error",
];

fn write_costs(path: &Path, rows: &[CostRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(COST_HEADER)?;
    for row in rows {
        w.serialize(CostRecord::from(row))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_costs(path: &Path) -> Result<Vec<CostRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<CostRecord>()
        .map(|rec| Ok(CostRow::from(rec?)))
        .collect()
}

fn write_summary(path: &Path, report: &CostReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["controller", "total", "sat_cen_lin_stable", "trials", "stable_trials"])?;
    if !report.rows.is_empty() {
        for kind in ControllerKind::ALL {
            w.write_record([
                kind.name().to_string(),
                report.total(kind).to_string(),
                report.stable(kind).to_string(),
                report.trials.to_string(),
                report.stable_trials.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Probe-node trajectories of every controller, one row per step.
fn write_trajectory(path: &Path, res: &TrialResult, probe: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "t".to_string(),
        "node".to_string(),
        "theta_ref".to_string(),
        "w".to_string(),
    ];
    for kind in ControllerKind::ALL {
        for q in ["theta", "omega", "u"] {
            header.push(format!("{}_{q}", kind.name()));
        }
    }
    w.write_record(&header)?;
    let (th, om) = (STATES_PER_NODE * probe, STATES_PER_NODE * probe + 1);
    for t in 0..res.disturbances.len() {
        let mut rec = vec![
            t.to_string(),
            probe.to_string(),
            res.setpoints[t].x_star[th].to_string(),
            res.disturbances[t][om].to_string(),
        ];
        for run in &res.runs {
            rec.push(fmt_opt(run.states.get(t).map(|x| x[th])));
            rec.push(fmt_opt(run.states.get(t).map(|x| x[om])));
            rec.push(fmt_opt(run.inputs.get(t).map(|u| u[probe])));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn render_trajectory(csv_path: &Path, svg_path: &Path) -> Result<()> {
    let mut r = csv::Reader::from_path(csv_path)?;
    let header = r.headers()?.clone();
    let mut columns: Vec<Vec<(f64, f64)>> = vec![Vec::new(); header.len()];
    let mut node = String::new();
    for rec in r.records() {
        let rec = rec?;
        let t: f64 = rec[0].parse().unwrap_or(f64::NAN);
        node = rec[1].to_string();
        for (c, field) in rec.iter().enumerate().skip(2) {
            if let Ok(v) = field.parse::<f64>() {
                columns[c].push((t, v));
            }
        }
    }
    let panel = |quantity: &str, with_ref: bool| {
        let mut series: Vec<Series> = ControllerKind::ALL
            .iter()
            .enumerate()
            .map(|(i, kind)| {
                let col = header.iter().position(|h| h == format!("{}_{quantity}", kind.name())).unwrap_or(0);
                Series {
                    name: kind.name().to_string(),
                    color: PALETTE[i],
                    points: columns[col].clone(),
                    dashed: false,
                }
            })
            .collect();
        if with_ref {
            series.push(Series {
                name: "setpoint".into(),
                color: "#555555",
                points: columns[2].clone(),
                dashed: true,
            });
        }
        series
    };
    let svg = trajectory_panels(
        &format!("node {node}"),
        &[
            ("phase", panel("theta", true)),
            ("frequency", panel("omega", false)),
            ("actuation", panel("u", false)),
        ],
    );
    fs::write(svg_path, svg)?;
    Ok(())
}

const PALETTE: [&str; 4] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a"];

fn render_summary(path: &Path, report: &CostReport) -> Result<()> {
    let bars: Vec<(String, &str, f64, f64)> = ControllerKind::ALL
        .iter()
        .enumerate()
        .map(|(i, k)| (k.name().to_string(), PALETTE[i], report.total(*k), report.stable(*k)))
        .collect();
    fs::write(path, bar_chart("mean normalized cost", ("all trials", "saturated LQR stable"), &bars))?;
    Ok(())
}

fn trajectory_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("traj_") && name.ends_with(".csv")
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Wall-clock times are kept apart from the cost tables, which are
/// reproducible byte for byte.
fn write_timing(path: &Path, results: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["trial", "controller", "wall_time_s", "online_solves"])?;
    for res in results {
        for run in &res.runs {
            w.write_record([
                res.trial.to_string(),
                run.kind.name().to_string(),
                format!("{:.6}", run.wall_time_s),
                run.online_solves.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `costs.csv`, `summary.csv`, `timing.csv`, one `traj_<trial>.csv`
/// per result for node `probe`, and SVG plots of all of them into `out_dir`.
pub fn emit_report(report: &CostReport, results: &[TrialResult], out_dir: &Path, probe: usize) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    write_costs(&out_dir.join("costs.csv"), &report.rows)?;
    write_summary(&out_dir.join("summary.csv"), report)?;
    write_timing(&out_dir.join("timing.csv"), results)?;
    for res in results {
        write_trajectory(&out_dir.join(format!("traj_{}.csv", res.trial)), res, probe)?;
    }
    render_plots(out_dir, report)
}

fn render_plots(dir: &Path, report: &CostReport) -> Result<()> {
    if !report.rows.is_empty() {
        render_summary(&dir.join("summary.svg"), report)?;
    }
    for csv_path in trajectory_files(dir)? {
        render_trajectory(&csv_path, &csv_path.with_extension("svg"))?;
    }
    Ok(())
}

/// Rebuilds `summary.csv` and every plot from the CSVs already in `dir`.
pub fn render_from_dir(dir: &Path) -> Result<CostReport> {
    let report = CostReport::from_rows(&read_costs(&dir.join("costs.csv"))?);
    write_summary(&dir.join("summary.csv"), &report)?;
    render_plots(dir, &report)?;
    Ok(report)
}
