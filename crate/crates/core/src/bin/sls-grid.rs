use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use sls_grid::harness::{emit_report, render_from_dir, run_benchmark, ControllerKind, CostReport, SimConfig};
use sls_grid::plant::PlantModel;
use sls_grid::sls::{synthesize_h2, validate_achievability};

#[derive(Parser)]
#[command(name = "sls-grid", version, about = "Layered SLS/MPC frequency control experiments on random grid meshes")]
struct Cli {
    /// TOML file with simulation settings; missing keys take their defaults.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, short, global = true, env = "SLS_GRID_OUT_DIR", default_value = "out")]
    out: PathBuf,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the localized H2 response for a plant and write it out.
    Synth {
        /// Plant dump to use instead of generating one from the config.
        #[arg(long)]
        plant: Option<PathBuf>,
    },
    /// Run one trial (seed from the config) and write its trajectories.
    Simulate,
    /// Run `--trials N` trials (default from the config) and write the cost tables.
    Benchmark,
    /// Recompute the summary and plots from CSVs in the output directory.
    Report,
}

/// One optional flag per config key; a given flag beats the file.
macro_rules! overrides {
    ($($field:ident: $ty:ty),* $(,)?) => {
        #[derive(Args, Default)]
        #[command(next_help_heading = "Config overrides")]
        struct Overrides {
            $(
                #[arg(long, global = true, allow_negative_numbers = true, value_name = stringify!($ty),
                      help = concat!("Override `", stringify!($field), "`"))]
                $field: Option<$ty>,
            )*
        }

        impl Overrides {
            fn apply(&self, cfg: &mut SimConfig) {
                $(
                    if let Some(v) = &self.$field {
                        cfg.$field = v.clone();
                    }
                )*
            }
        }
    };
}

overrides! {
    rows: usize,
    cols: usize,
    seed: u64,
    dt: f64,
    u_max: f64,
    u_max_fraction: f64,
    u_max_holding_margin: f64,
    extra_edge_prob: f64,
    q_weight: f64,
    r_weight: f64,
    horizon: usize,
    t_mpc: usize,
    d: i64,
    disturbance_std: f64,
    disturbance_relative: bool,
    setpoint_magnitude: f64,
    num_periods: usize,
    trials: usize,
    admm_rho: f64,
    admm_eps_primal: f64,
    admm_eps_dual: f64,
    admm_max_iters: usize,
    admm_adaptive_rho: bool,
    admm_relaxation: f64,
    divergence_threshold: f64,
    probe_node: i64,
    audit: bool,
}

fn load_config(cli: &Cli) -> sls_grid::Result<SimConfig> {
    let mut cfg = match &cli.config {
        Some(path) => SimConfig::load(path)?,
        None => SimConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(report: &CostReport) {
    println!("{:<12} {:>14} {:>18}", "controller", "total", "SatCenLin stable");
    for kind in ControllerKind::ALL {
        println!("{:<12} {:>14.4} {:>18.4}", kind.name(), report.total(kind), report.stable(kind));
    }
    println!(
        "{} completed trials, SatCenLin stable in {}",
        report.trials, report.stable_trials
    );
    for (trial, msg) in &report.failures {
        eprintln!("trial {trial} failed: {msg}");
    }
}

fn synth(cfg: &SimConfig, plant_path: Option<&Path>, out: &Path) -> sls_grid::Result<()> {
    let plant = match plant_path {
        Some(p) => PlantModel::from_text(&std::fs::read_to_string(p)?)?,
        None => PlantModel::generate_with(cfg.rows, cfg.cols, cfg.seed, &cfg.plant_params())?,
    };
    let (q, r) = cfg.weights_for(plant.node_count());
    let mask = plant.locality_mask(cfg.locality());
    let start = Instant::now();
    let response = synthesize_h2(&plant, cfg.horizon, &mask, &q, &r)?;
    let elapsed = start.elapsed();
    let residual = validate_achievability(plant.system(), &response)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("plant.toml"), plant.to_text())?;
    std::fs::write(out.join("response.txt"), response.to_text())?;
    println!(
        "{} nodes, horizon {}, d = {}: synthesized in {:.3} s, achievability residual {residual:.2e}, H2 cost {:.6}",
        plant.node_count(),
        cfg.horizon,
        cfg.d,
        elapsed.as_secs_f64(),
        response.h2_cost(&q, &r)
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: &Cli) -> sls_grid::Result<bool> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::Synth { plant } => {
            synth(&cfg, plant.as_deref(), out)?;
            Ok(true)
        }
        Command::Simulate | Command::Benchmark => {
            let trials = match cli.command {
                Command::Benchmark => cfg.trials,
                _ => 1,
            };
            let start = Instant::now();
            let (report, results) = run_benchmark(&cfg, trials)?;
            emit_report(&report, &results, out, cfg.probe())?;
            std::fs::write(out.join("config.toml"), cfg.to_toml())?;
            print_report(&report);
            println!("{trials} trial(s) in {:.1} s, results in {}", start.elapsed().as_secs_f64(), out.display());
            Ok(report.failures.is_empty())
        }
        Command::Report => {
            let report = render_from_dir(out)?;
            print_report(&report);
            Ok(report.failures.is_empty())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
