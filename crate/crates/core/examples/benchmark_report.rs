//! A reduced benchmark on 3x3 grids: three trials of all four controllers,
//! written out as CSV and SVG to a temporary directory (or the directory
//! given as the first argument).

use sls_grid::harness::{emit_report, run_benchmark, ControllerKind, SimConfig};

fn main() -> sls_grid::Result<()> {
    let config = SimConfig {
        rows: 3,
        cols: 3,
        horizon: 10,
        t_mpc: 10,
        num_periods: 3,
        ..SimConfig::default()
    };
    let (report, results) = run_benchmark(&config, 3)?;

    for res in &results {
        let line: Vec<String> = ControllerKind::ALL
            .iter()
            .map(|k| format!("{} {:.3}", k.name(), res.normalized(*k)))
            .collect();
        println!("trial {} (seed {}, u_max {:.3}): {}", res.trial, res.seed, res.u_max, line.join(", "));
    }
    for kind in ControllerKind::ALL {
        println!("{:<12} mean {:.4}  stable-subset mean {:.4}", kind.name(), report.total(kind), report.stable(kind));
    }

    let out = match std::env::args().nth(1) {
        Some(dir) => std::path::PathBuf::from(dir),
        None => std::env::temp_dir().join("sls-grid-benchmark-example"),
    };
    emit_report(&report, &results, &out, config.probe())?;
    println!("report written to {}", out.display());
    Ok(())
}
