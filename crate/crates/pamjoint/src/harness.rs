//! Scenario runner: wires plant, estimator and controller together,
//! produces per-tick trace records, CSV output and summary metrics.

use std::io::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::control::{Controller, ReferenceCommand};
use crate::error::{Error, Result};
use crate::plant::{ControlInput, Plant, ValveMode};
use crate::refset::AdmissibleSet;
use crate::statics::PlantState;
use crate::ukf::{derive_outputs, Estimate, Ukf};

/// Angle reference signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "type", rename_all = "lowercase")]
pub enum AngleReference {
    Constant {
        value_deg: f64,
    },
    Sinusoid {
        amplitude_deg: f64,
        period_s: f64,
        #[serde(default)]
        phase_rad: f64,
    },
    Steps {
        times_s: Vec<f64>,
        values_deg: Vec<f64>,
    },
}

impl AngleReference {
    /// Reference angle in radians at time `t`.
    pub fn at(&self, t: f64) -> f64 {
        match self {
            AngleReference::Constant { value_deg } => value_deg.to_radians(),
            AngleReference::Sinusoid {
                amplitude_deg,
                period_s,
                phase_rad,
            } => {
                amplitude_deg.to_radians()
                    * (2.0 * std::f64::consts::PI * t / period_s + phase_rad).sin()
            }
            AngleReference::Steps { times_s, values_deg } => {
                step_value(times_s, values_deg, t).to_radians()
            }
        }
    }
}

/// Stiffness reference signal (N m / rad).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "type", rename_all = "lowercase")]
pub enum StiffnessReference {
    Constant { value: f64 },
    Steps { times_s: Vec<f64>, values: Vec<f64> },
}

impl StiffnessReference {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            StiffnessReference::Constant { value } => *value,
            StiffnessReference::Steps { times_s, values } => step_value(times_s, values, t),
        }
    }
}

/// Piecewise-constant lookup: `values[i]` holds on `[times[i], times[i+1])`.
fn step_value(times: &[f64], values: &[f64], t: f64) -> f64 {
    let mut v = values[0];
    for (&ti, &vi) in times.iter().zip(values.iter()) {
        if t >= ti {
            v = vi;
        } else {
            break;
        }
    }
    v
}

/// Initial plant state in user-facing units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialState {
    pub psi_deg: f64,
    pub psi_dot: f64,
    pub p1_kpa: f64,
    pub p2_kpa: f64,
}

impl Default for InitialState {
    fn default() -> Self {
        Self {
            psi_deg: 0.0,
            psi_dot: 0.0,
            p1_kpa: 400.0,
            p2_kpa: 400.0,
        }
    }
}

impl InitialState {
    pub fn to_state(self) -> PlantState {
        PlantState::new(
            self.psi_deg.to_radians(),
            self.psi_dot,
            self.p1_kpa * 1e3,
            self.p2_kpa * 1e3,
        )
    }
}

/// One closed-loop scenario: references, horizon and solver granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub duration_s: f64,
    /// Samples before this time are excluded from the metrics.
    pub transient_s: f64,
    /// Controller tick period (s); inputs are held between ticks.
    pub control_period_s: f64,
    /// Integrator substeps per controller tick.
    pub plant_substeps: usize,
    /// Run the state estimator in the loop; otherwise the controller is
    /// fed the true plant state.
    pub estimator: bool,
    pub init: InitialState,
    pub angle_ref: AngleReference,
    pub stiffness_ref: StiffnessReference,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            duration_s: 30.0,
            transient_s: 2.0,
            control_period_s: 1e-3,
            plant_substeps: 1,
            estimator: true,
            init: InitialState::default(),
            angle_ref: AngleReference::Sinusoid {
                amplitude_deg: 15.0,
                period_s: 10.0,
                phase_rad: 0.0,
            },
            stiffness_ref: StiffnessReference::Steps {
                times_s: vec![0.0, 15.0],
                values: vec![7.2, 6.5],
            },
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) {
            return Err(Error::Config("duration_s must be positive".into()));
        }
        if !(self.control_period_s > 0.0) {
            return Err(Error::Config("control_period_s must be positive".into()));
        }
        if self.plant_substeps == 0 {
            return Err(Error::Config("plant_substeps must be at least 1".into()));
        }
        let ok_steps = |times: &[f64], n_vals: usize| {
            !times.is_empty()
                && times.len() == n_vals
                && times.windows(2).all(|w| w[0] < w[1])
        };
        if let AngleReference::Steps { times_s, values_deg } = &self.angle_ref {
            if !ok_steps(times_s, values_deg.len()) {
                return Err(Error::Config(
                    "angle_ref steps need matching, strictly increasing times".into(),
                ));
            }
        }
        if let AngleReference::Sinusoid { period_s, .. } = &self.angle_ref {
            if !(*period_s > 0.0) {
                return Err(Error::Config("sinusoid period must be positive".into()));
            }
        }
        if let StiffnessReference::Steps { times_s, values } = &self.stiffness_ref {
            if !ok_steps(times_s, values.len()) {
                return Err(Error::Config(
                    "stiffness_ref steps need matching, strictly increasing times".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Named scenario presets: sinusoidal angle tracking at three amplitudes
/// with a mid-run stiffness step.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let (amp, kp0, kp1) = match name {
        "a15" => (15.0, 7.2, 6.5),
        "a10" => (10.0, 8.0, 5.5),
        "a5" => (5.0, 9.0, 4.0),
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}' (expected a15, a10 or a5)"
            )))
        }
    };
    Ok(ScenarioConfig {
        angle_ref: AngleReference::Sinusoid {
            amplitude_deg: amp,
            period_s: 10.0,
            phase_rad: 0.0,
        },
        stiffness_ref: StiffnessReference::Steps {
            times_s: vec![0.0, 15.0],
            values: vec![kp0, kp1],
        },
        ..ScenarioConfig::default()
    })
}

/// One logged controller tick. Angles in degrees, pressures in kPa,
/// forces in N, torques in N m, stiffness in N m / rad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub psi_ref_deg: f64,
    pub psi_true_deg: f64,
    pub psi_hat_deg: f64,
    pub kp_ref: f64,
    pub kp_true: f64,
    pub kp_hat: f64,
    pub p1_true_kpa: f64,
    pub p2_true_kpa: f64,
    pub p1_meas_kpa: f64,
    pub p2_meas_kpa: f64,
    pub f1_true: f64,
    pub f2_true: f64,
    pub f1_ref: f64,
    pub f2_ref: f64,
    pub f1_hat: f64,
    pub f2_hat: f64,
    pub tau_c: f64,
    pub u1: f64,
    pub u2: f64,
    /// Active subsystem index, 1..=18.
    pub sigma: usize,
    /// Whether (psi_true, kp_true) lies in the admissible set (0/1; -1 when
    /// no set was supplied).
    pub in_set: i8,
}

pub const CSV_HEADER: &str = "t,psi_ref_deg,psi_true_deg,psi_hat_deg,Kp_ref,Kp_true,Kp_hat,\
P1_true_kPa,P2_true_kPa,P1_meas_kPa,P2_meas_kPa,F1_true,F2_true,F1_ref,F2_ref,F1_hat,F2_hat,\
tau_c,u1,u2,sigma,in_set";

/// Writes a trace as CSV. Fixed-precision formatting keeps the output
/// byte-identical across runs with the same seed.
pub fn write_csv<W: std::io::Write>(out: &mut W, trace: &[TraceRecord]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in trace {
        writeln!(
            out,
            "{:.4},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            r.t,
            r.psi_ref_deg,
            r.psi_true_deg,
            r.psi_hat_deg,
            r.kp_ref,
            r.kp_true,
            r.kp_hat,
            r.p1_true_kpa,
            r.p2_true_kpa,
            r.p1_meas_kpa,
            r.p2_meas_kpa,
            r.f1_true,
            r.f2_true,
            r.f1_ref,
            r.f2_ref,
            r.f1_hat,
            r.f2_hat,
            r.tau_c,
            r.u1,
            r.u2,
            r.sigma,
            r.in_set,
        )?;
    }
    Ok(())
}

pub fn write_csv_file(path: &std::path::Path, trace: &[TraceRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(&mut f, trace)?;
    f.flush()?;
    Ok(())
}

fn abort(tick: usize, t: f64, e: Error) -> Error {
    Error::ScenarioAborted {
        tick,
        t,
        source: Box::new(e),
    }
}

/// Runs the full closed loop (plant + estimator + cascade controller) and
/// returns the per-tick trace. With `scenario.estimator = false` the
/// controller is fed the true state instead of the filter output.
pub fn run_closed_loop(cfg: &Config, set: Option<&AdmissibleSet>) -> Result<Vec<TraceRecord>> {
    cfg.validate()?;
    let sc = &cfg.scenario;
    let dt = sc.control_period_s;
    let n_ticks = (sc.duration_s / dt).round() as usize;

    let mut plant = Plant::new(
        sc.init.to_state(),
        cfg.model.clone(),
        cfg.plant.clone(),
        cfg.noise.clone(),
    );
    let ukf = Ukf::new(cfg.ukf.clone(), &cfg.model, cfg.plant.clone())?;
    let mut controller = Controller::new(cfg.controller.clone(), &cfg.model);
    let mut est = ukf.initial_estimate(plant.state)?;
    let mut u_prev: Option<ControlInput> = None;
    let mut trace = Vec::with_capacity(n_ticks);

    for tick in 0..n_ticks {
        let t = tick as f64 * dt;
        let meas = plant.measure();

        if sc.estimator {
            if let Some(u) = &u_prev {
                est = ukf.predict(&est, u, dt).map_err(|e| abort(tick, t, e))?;
            }
            est = ukf.update(&est, meas).map_err(|e| abort(tick, t, e))?;
        } else {
            est = truth_estimate(&plant).map_err(|e| abort(tick, t, e))?;
        }

        let cmd = ReferenceCommand {
            psi_ref: sc.angle_ref.at(t),
            kp_ref: sc.stiffness_ref.at(t),
        };
        let out = controller
            .step(&cmd, &est, meas)
            .map_err(|e| abort(tick, t, e))?;

        let state = plant.state;
        let (f1_true, f2_true, _, kp_true) =
            derive_outputs(&state, &plant.params).map_err(|e| abort(tick, t, e))?;
        let mode = plant
            .advance(&out.u, dt, sc.plant_substeps)
            .map_err(|e| abort(tick, t, e))?;

        trace.push(make_record(
            t, &cmd, &state, &est, meas, &out, f1_true, f2_true, kp_true, mode, set,
        ));
        u_prev = Some(out.u);
    }
    Ok(trace)
}

#[allow(clippy::too_many_arguments)]
fn make_record(
    t: f64,
    cmd: &ReferenceCommand,
    state: &PlantState,
    est: &Estimate,
    meas: (f64, f64),
    out: &crate::control::ControllerOutputs,
    f1_true: f64,
    f2_true: f64,
    kp_true: f64,
    mode: ValveMode,
    set: Option<&AdmissibleSet>,
) -> TraceRecord {
    // Truth columns refer to the state at the start of the tick, i.e.
    // what the controller acted on.
    let in_set = match set {
        Some(s) => i8::from(s.contains(state.psi, kp_true)),
        None => -1,
    };
    TraceRecord {
        t,
        psi_ref_deg: cmd.psi_ref.to_degrees(),
        psi_true_deg: state.psi.to_degrees(),
        psi_hat_deg: est.mean.psi.to_degrees(),
        kp_ref: cmd.kp_ref,
        kp_true,
        kp_hat: est.kp,
        p1_true_kpa: state.p1 * 1e-3,
        p2_true_kpa: state.p2 * 1e-3,
        p1_meas_kpa: meas.0 * 1e-3,
        p2_meas_kpa: meas.1 * 1e-3,
        f1_true,
        f2_true,
        f1_ref: out.f1_ref,
        f2_ref: out.f2_ref,
        f1_hat: est.f1,
        f2_hat: est.f2,
        tau_c: out.tau_c,
        u1: out.u.voltage(crate::plant::Muscle::One),
        u2: out.u.voltage(crate::plant::Muscle::Two),
        sigma: mode.index(),
        in_set,
    }
}

/// Zero-covariance estimate built from the true plant state (estimator
/// bypass mode).
fn truth_estimate(plant: &Plant) -> Result<Estimate> {
    let (f1, f2, tau, kp) = derive_outputs(&plant.state, &plant.params)?;
    Ok(Estimate {
        mean: plant.state,
        cov: nalgebra::Matrix4::zeros(),
        f1,
        f2,
        tau,
        kp,
    })
}

/// Open-loop valve voltage schedule used by the `openloop` command:
/// u1 steps 6 -> 4.7 V at 25 s; u2 alternates 6 / 4.5 V at 10, 25, 40 s.
pub fn open_loop_input(t: f64) -> ControlInput {
    let u1 = if t < 25.0 { 6.0 } else { 4.7 };
    let u2 = if t < 10.0 {
        6.0
    } else if t < 25.0 {
        4.5
    } else if t < 40.0 {
        6.0
    } else {
        4.5
    };
    ControlInput::new(u1, u2)
}

/// Runs the plant open loop under `open_loop_input` for 55 s and logs the
/// truth. Reference and controller columns are not meaningful here and
/// are written as NaN.
pub fn run_open_loop(cfg: &Config, set: Option<&AdmissibleSet>) -> Result<Vec<TraceRecord>> {
    cfg.model.validate()?;
    let sc = &cfg.scenario;
    let dt = sc.control_period_s;
    let duration = 55.0;
    let n_ticks = (duration / dt).round() as usize;
    let mut plant = Plant::new(
        sc.init.to_state(),
        cfg.model.clone(),
        cfg.plant.clone(),
        cfg.noise.clone(),
    );
    let mut trace = Vec::with_capacity(n_ticks);
    for tick in 0..n_ticks {
        let t = tick as f64 * dt;
        let u = open_loop_input(t);
        let meas = plant.measure();
        let state = plant.state;
        let (f1, f2, _, kp) =
            derive_outputs(&state, &plant.params).map_err(|e| abort(tick, t, e))?;
        let mode = plant
            .advance(&u, dt, sc.plant_substeps)
            .map_err(|e| abort(tick, t, e))?;
        let in_set = match set {
            Some(s) => i8::from(s.contains(state.psi, kp)),
            None => -1,
        };
        trace.push(TraceRecord {
            t,
            psi_ref_deg: f64::NAN,
            psi_true_deg: state.psi.to_degrees(),
            psi_hat_deg: state.psi.to_degrees(),
            kp_ref: f64::NAN,
            kp_true: kp,
            kp_hat: kp,
            p1_true_kpa: state.p1 * 1e-3,
            p2_true_kpa: state.p2 * 1e-3,
            p1_meas_kpa: meas.0 * 1e-3,
            p2_meas_kpa: meas.1 * 1e-3,
            f1_true: f1,
            f2_true: f2,
            f1_ref: f64::NAN,
            f2_ref: f64::NAN,
            f1_hat: f1,
            f2_hat: f2,
            tau_c: f64::NAN,
            u1: u.voltage(crate::plant::Muscle::One),
            u2: u.voltage(crate::plant::Muscle::Two),
            sigma: mode.index(),
            in_set,
        });
    }
    Ok(trace)
}

/// Aggregate tracking/estimation quality over a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// RMSE of true angle vs reference (deg), post-transient.
    pub angle_rmse_deg: f64,
    /// RMSE of estimated vs true angle (deg), post-transient.
    pub angle_est_rmse_deg: f64,
    /// RMSE of true stiffness vs reference (N m / rad), post-transient.
    pub kp_rmse: f64,
    /// RMSE of estimated vs true stiffness, post-transient.
    pub kp_est_rmse: f64,
    /// Fraction of post-transient samples with (psi, K_P) inside the
    /// admissible set (NaN when the trace carries no set annotation).
    pub in_set_fraction: f64,
    /// Fraction of post-transient samples with either valve rail-saturated.
    pub saturation_duty: f64,
    pub samples: usize,
}

pub fn compute_metrics(trace: &[TraceRecord], transient_s: f64) -> Metrics {
    let post: Vec<&TraceRecord> = trace.iter().filter(|r| r.t >= transient_s).collect();
    let n = post.len();
    let rmse = |f: &dyn Fn(&TraceRecord) -> f64| -> f64 {
        if n == 0 {
            return f64::NAN;
        }
        (post.iter().map(|r| f(r).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let annotated = post.iter().filter(|r| r.in_set >= 0).count();
    let in_set_fraction = if annotated == 0 {
        f64::NAN
    } else {
        post.iter().filter(|r| r.in_set == 1).count() as f64 / annotated as f64
    };
    let saturated = post
        .iter()
        .filter(|r| r.u1 <= 0.0 || r.u1 >= 10.0 || r.u2 <= 0.0 || r.u2 >= 10.0)
        .count();
    Metrics {
        angle_rmse_deg: rmse(&|r| r.psi_true_deg - r.psi_ref_deg),
        angle_est_rmse_deg: rmse(&|r| r.psi_hat_deg - r.psi_true_deg),
        kp_rmse: rmse(&|r| r.kp_true - r.kp_ref),
        kp_est_rmse: rmse(&|r| r.kp_hat - r.kp_true),
        in_set_fraction,
        saturation_duty: if n == 0 {
            f64::NAN
        } else {
            saturated as f64 / n as f64
        },
        samples: n,
    }
}

/// Writes the admissible set boundary (and optionally the cloud) as CSV.
pub fn write_set_csv<W: std::io::Write>(
    out: &mut W,
    set: &AdmissibleSet,
    include_cloud: bool,
) -> Result<()> {
    if include_cloud {
        writeln!(out, "P1_kPa,P2_kPa,psi_inf_deg,Kp,branch")?;
        for p in &set.cloud {
            writeln!(
                out,
                "{:.3},{:.3},{:.6},{:.6},{}",
                p.p1 * 1e-3,
                p.p2 * 1e-3,
                p.psi_inf.to_degrees(),
                p.kp,
                p.branch.label()
            )?;
        }
    } else {
        writeln!(out, "psi_deg,Kp")?;
        for &(x, y) in &set.boundary {
            writeln!(out, "{:.6},{:.6}", x.to_degrees(), y)?;
        }
    }
    Ok(())
}

/// Steady-state check helper used by tests: true angle span of a trace
/// window.
pub fn window(trace: &[TraceRecord], t0: f64, t1: f64) -> Vec<&TraceRecord> {
    trace.iter().filter(|r| r.t >= t0 && r.t < t1).collect()
}
