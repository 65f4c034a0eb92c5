//! Command-line harness for the PAM joint digital twin.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pamjoint::config::Config;
use pamjoint::error::Error;
use pamjoint::harness::{
    self, compute_metrics, run_closed_loop, run_open_loop, write_csv_file, write_set_csv,
};
use pamjoint::refset::{build_set, sweep};

#[derive(Parser)]
#[command(name = "pamjoint", version, about = "Antagonistic PAM joint digital twin")]
struct Cli {
    /// Override the plant/estimator noise seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Model parameter / configuration file (TOML); later sections may be
    /// overridden per command.
    #[arg(long, global = true)]
    params: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop scenario from a configuration file.
    Simulate {
        /// Scenario configuration file (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Feed the controller the true state instead of the filter output.
        #[arg(long)]
        no_estimator: bool,
        /// Output trace CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the 55 s open-loop valve schedule and log the truth.
    Openloop {
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the steady-state map and emit the admissible set.
    Refset {
        /// Pressure grid step in kPa.
        #[arg(long, default_value_t = 5.0)]
        grid_kpa: f64,
        /// Steady-state cloud CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Optional boundary polygon CSV path.
        #[arg(long)]
        polygon: Option<PathBuf>,
    },
    /// Run a named preset scenario (a15, a10, a5) and print metrics.
    Scenarios {
        #[arg(long)]
        which: String,
        /// Optional trace CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<Config, Error> {
    match &cli.params {
        Some(path) => Config::from_file(path),
        None => Ok(Config::default()),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = load_config(&cli)?;
    if let Some(seed) = cli.seed {
        cfg.noise.seed = seed;
    }
    match &cli.command {
        Command::Simulate {
            config,
            no_estimator,
            out,
        } => {
            if let Some(path) = config {
                let scenario_cfg = Config::from_file(path)?;
                cfg = scenario_cfg;
                if let Some(seed) = cli.seed {
                    cfg.noise.seed = seed;
                }
            }
            if *no_estimator {
                cfg.scenario.estimator = false;
            }
            let trace = run_closed_loop(&cfg, None)?;
            write_csv_file(out, &trace)?;
            let m = compute_metrics(&trace, cfg.scenario.transient_s);
            print_metrics(&m);
        }
        Command::Openloop { out } => {
            let trace = run_open_loop(&cfg, None)?;
            write_csv_file(out, &trace)?;
            println!("open-loop trace: {} samples -> {}", trace.len(), out.display());
        }
        Command::Refset {
            grid_kpa,
            out,
            polygon,
        } => {
            if !(*grid_kpa > 0.0) {
                return Err(Error::Config("grid step must be positive".into()));
            }
            let (points, skipped) = sweep(&cfg.model, grid_kpa * 1e3)?;
            let set = build_set(&points, grid_kpa * 1e3)?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(out)?);
            write_set_csv(&mut f, &set, true)?;
            if let Some(path) = polygon {
                let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
                write_set_csv(&mut f, &set, false)?;
            }
            println!(
                "steady-state cloud: {} points ({} outside the travel range skipped), \
                 boundary: {} vertices, {} angle bins",
                set.cloud.len(),
                skipped,
                set.boundary.len(),
                set.bins.len()
            );
        }
        Command::Scenarios { which, out } => {
            cfg.scenario = harness::preset(which)?;
            let (points, _) = sweep(&cfg.model, 5e3)?;
            let set = build_set(&points, 5e3)?;
            let trace = run_closed_loop(&cfg, Some(&set))?;
            if let Some(path) = out {
                write_csv_file(path, &trace)?;
            }
            let m = compute_metrics(&trace, cfg.scenario.transient_s);
            println!("preset {which}:");
            print_metrics(&m);
        }
    }
    Ok(())
}

fn print_metrics(m: &harness::Metrics) {
    println!("samples (post-transient): {}", m.samples);
    println!("angle tracking RMSE:      {:.4} deg", m.angle_rmse_deg);
    println!("angle estimation RMSE:    {:.4} deg", m.angle_est_rmse_deg);
    println!("stiffness tracking RMSE:  {:.4} N m/rad", m.kp_rmse);
    println!("stiffness estimation RMSE:{:.4} N m/rad", m.kp_est_rmse);
    if !m.in_set_fraction.is_nan() {
        println!("in-set fraction:          {:.4}", m.in_set_fraction);
    }
    println!("valve saturation duty:    {:.4}", m.saturation_duty);
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own message; keep help/version on stdout with
            // success status, usage errors distinct.
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(2),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match &e {
                Error::Config(_) => 3,
                Error::Io(_) => 4,
                _ => 5,
            };
            ExitCode::from(code)
        }
    }
}
