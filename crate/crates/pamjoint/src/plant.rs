//! Switched continuous-time plant of the antagonistic PAM joint: valve
//! orifice flow, polytropic pressure dynamics, seesaw mechanics with
//! Karnopp stick-slip friction, fixed-step RK4 integration and noisy
//! pressure measurement.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statics::{
    self, contraction_force, joint_torque, pam_lengths, pam_volume, pam_volume_slope,
    static_friction_bound, ModelParameters, PlantState,
};

/// Muscle / valve index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Muscle {
    One,
    Two,
}

impl std::fmt::Display for Muscle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Muscle::One => write!(f, "1"),
            Muscle::Two => write!(f, "2"),
        }
    }
}

/// Valve command voltages, clamped to [0, 10] V on construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub u1: f64,
    pub u2: f64,
}

impl ControlInput {
    pub fn new(u1: f64, u2: f64) -> Self {
        Self {
            u1: u1.clamp(0.0, 10.0),
            u2: u2.clamp(0.0, 10.0),
        }
    }

    pub fn voltage(&self, side: Muscle) -> f64 {
        match side {
            Muscle::One => self.u1,
            Muscle::Two => self.u2,
        }
    }
}

/// Discrete mode of one 5/3-way proportional valve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValveAction {
    Charge,
    Closed,
    Discharge,
}

/// Joint friction mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrictionMode {
    Stick,
    Slip,
}

/// Active subsystem: one mode per valve plus the friction mode,
/// 3 x 3 x 2 = 18 combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValveMode {
    pub valve1: ValveAction,
    pub valve2: ValveAction,
    pub friction: FrictionMode,
}

impl ValveMode {
    /// Subsystem index in 1..=18.
    pub fn index(&self) -> usize {
        let a = |v: ValveAction| match v {
            ValveAction::Charge => 0,
            ValveAction::Closed => 1,
            ValveAction::Discharge => 2,
        };
        let f = match self.friction {
            FrictionMode::Stick => 0,
            FrictionMode::Slip => 1,
        };
        1 + a(self.valve1) * 6 + a(self.valve2) * 2 + f
    }
}

/// Process/measurement noise description for simulation runs.
///
/// `q_diag` is the per-tick process covariance added to the state after
/// each controller-period step; `r_diag` the pressure measurement
/// covariance. The same seed always reproduces the same trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub q_diag: [f64; 4],
    pub r_diag: [f64; 2],
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            q_diag: [0.0, 0.0, 1e4, 1e4],
            r_diag: [1e8, 1e8],
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            q_diag: [0.0; 4],
            r_diag: [0.0; 2],
            seed: 0,
        }
    }
}

/// Plant-side configuration that is not part of the identified parameter
/// set: valve dead zone, stick detection threshold and the mechanical
/// angle stop of the testbed frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    /// Dead-zone half width around the 5 V valve neutral (V).
    pub dead_zone: f64,
    /// Stick detection velocity threshold (rad/s).
    pub v_eps: f64,
    /// Mechanical stop angle (rad); the frame limits travel to +-25 deg.
    pub stop_angle: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            dead_zone: 0.05,
            v_eps: 1e-4,
            stop_angle: 25.0_f64.to_radians(),
        }
    }
}

/// Discrete mode of one valve at command voltage `u`: charge above the
/// dead zone, discharge below it, closed inside.
pub fn valve_action(u: f64, cfg: &PlantConfig) -> ValveAction {
    let mid = 5.0;
    if u > mid + cfg.dead_zone {
        ValveAction::Charge
    } else if u < mid - cfg.dead_zone {
        ValveAction::Discharge
    } else {
        ValveAction::Closed
    }
}

/// Effective orifice area at command voltage `u`: proportional opening
/// beyond the dead zone, using the charge-side area when charging and the
/// discharge-side area otherwise.
pub fn effective_area(u: f64, side: Muscle, params: &ModelParameters, cfg: &PlantConfig) -> f64 {
    let span = 5.0 - cfg.dead_zone;
    match valve_action(u, cfg) {
        ValveAction::Charge => {
            let a = match side {
                Muscle::One => params.a_11,
                Muscle::Two => params.a_12,
            };
            a * ((u - 5.0 - cfg.dead_zone) / span).min(1.0)
        }
        ValveAction::Discharge => {
            let a = match side {
                Muscle::One => params.a_21,
                Muscle::Two => params.a_22,
            };
            a * ((5.0 - cfg.dead_zone - u) / span).min(1.0)
        }
        ValveAction::Closed => 0.0,
    }
}

/// Isentropic nozzle mass flow magnitude through an orifice of effective
/// area `a_eff` (kg/s). Choked when the pressure ratio falls at or below
/// the critical value (2/(k+1))^(k/(k-1)), subsonic St. Venant flow
/// otherwise.
pub fn orifice_mass_flow(
    p_up: f64,
    p_down: f64,
    a_eff: f64,
    params: &ModelParameters,
) -> Result<f64> {
    if p_down > p_up || p_down <= 0.0 {
        return Err(Error::PressureOrdering {
            upstream: p_up,
            downstream: p_down,
        });
    }
    if a_eff == 0.0 || p_up == p_down {
        return Ok(0.0);
    }
    let k = params.k;
    let rt = params.r_gas * params.t;
    let ratio = p_down / p_up;
    let critical = (2.0 / (k + 1.0)).powf(k / (k - 1.0));
    let flow = if ratio <= critical {
        a_eff * p_up * (k / rt).sqrt() * (2.0 / (k + 1.0)).powf((k + 1.0) / (2.0 * (k - 1.0)))
    } else {
        let term = ratio.powf(2.0 / k) - ratio.powf((k + 1.0) / k);
        a_eff * p_up * (2.0 * k / (rt * (k - 1.0)) * term).sqrt()
    };
    Ok(flow)
}

/// Polytropic pressure rate of one muscle:
/// dP/dt = (n R T mdot - n P dV/dt) / V with n = k1 while charging or
/// closed and n = k2 while discharging. `mdot` is signed (positive into
/// the muscle).
pub fn pressure_derivative(
    p: f64,
    l: f64,
    l_dot: f64,
    mdot: f64,
    action: ValveAction,
    params: &ModelParameters,
) -> Result<f64> {
    let v = pam_volume(l, params)?;
    let v_dot = pam_volume_slope(l, params) * l_dot;
    let n = match action {
        ValveAction::Discharge => params.k2,
        _ => params.k1,
    };
    Ok((n * params.r_gas * params.t * mdot - n * p * v_dot) / v)
}

/// Karnopp stick-slip friction torque. `t_ext` is the net non-frictional
/// torque on the joint. Returns the friction torque and the active mode;
/// in stick the friction exactly cancels `t_ext`.
pub fn friction_torque(
    state: &PlantState,
    t_ext: f64,
    params: &ModelParameters,
    cfg: &PlantConfig,
) -> Result<(f64, FrictionMode)> {
    let bound = static_friction_bound(state.psi, state.p1, state.p2, params)?;
    if state.psi_dot.abs() < cfg.v_eps && t_ext.abs() <= bound {
        return Ok((t_ext, FrictionMode::Stick));
    }
    let dir = if state.psi_dot.abs() >= cfg.v_eps {
        state.psi_dot.signum()
    } else {
        t_ext.signum()
    };
    Ok((dir * bound + params.c_s * state.psi_dot, FrictionMode::Slip))
}

fn signed_mass_flow(
    p: f64,
    u: f64,
    side: Muscle,
    params: &ModelParameters,
    cfg: &PlantConfig,
) -> Result<f64> {
    let a_eff = effective_area(u, side, params, cfg);
    match valve_action(u, cfg) {
        ValveAction::Closed => Ok(0.0),
        ValveAction::Charge => {
            // Muscle pressure is clamped to the tank, so treat a tiny
            // overshoot as equalized rather than a caller bug.
            let p_down = p.min(params.p_tank);
            Ok(orifice_mass_flow(params.p_tank, p_down, a_eff, params)?)
        }
        ValveAction::Discharge => {
            let p_up = p.max(params.p_out);
            Ok(-orifice_mass_flow(p_up, params.p_out, a_eff, params)?)
        }
    }
}

/// Continuous-time state derivative and the active subsystem.
pub fn state_derivative(
    state: &PlantState,
    u: &ControlInput,
    params: &ModelParameters,
    cfg: &PlantConfig,
) -> Result<([f64; 4], ValveMode)> {
    let (l1, l2) = pam_lengths(state.psi, params)?;
    let f1 = contraction_force(l1, state.p1, Muscle::One, params)?;
    let f2 = contraction_force(l2, state.p2, Muscle::Two, params)?;
    let tau = joint_torque(state.psi, f1, f2, params);
    let t_ext = tau - params.k_s * state.psi;
    let (t_f, friction) = friction_torque(state, t_ext, params, cfg)?;

    let (mut psi_dot, mut psi_ddot) = match friction {
        FrictionMode::Stick => (0.0, 0.0),
        FrictionMode::Slip => (state.psi_dot, (t_ext - t_f) / params.j),
    };

    // Mechanical stop: a joint resting on the travel limit with the net
    // torque still pushing outward does not move, so the derivative must
    // not carry the unconstrained acceleration into the volume-rate term.
    if state.psi >= cfg.stop_angle && psi_dot >= 0.0 && psi_ddot >= 0.0 {
        psi_dot = 0.0;
        psi_ddot = 0.0;
    } else if state.psi <= -cfg.stop_angle && psi_dot <= 0.0 && psi_ddot <= 0.0 {
        psi_dot = 0.0;
        psi_ddot = 0.0;
    }

    let c = state.psi.cos();
    let l1_dot = -params.r * c * psi_dot;
    let l2_dot = params.r * c * psi_dot;

    let mode = ValveMode {
        valve1: valve_action(u.u1, cfg),
        valve2: valve_action(u.u2, cfg),
        friction,
    };
    let attach = |e: Error| Error::PlantInvariant {
        mode: mode.index(),
        detail: e.to_string(),
    };

    let m1 = signed_mass_flow(state.p1, u.u1, Muscle::One, params, cfg).map_err(attach)?;
    let m2 = signed_mass_flow(state.p2, u.u2, Muscle::Two, params, cfg).map_err(attach)?;
    let p1_dot = pressure_derivative(state.p1, l1, l1_dot, m1, mode.valve1, params).map_err(attach)?;
    let p2_dot = pressure_derivative(state.p2, l2, l2_dot, m2, mode.valve2, params).map_err(attach)?;

    Ok(([psi_dot, psi_ddot, p1_dot, p2_dot], mode))
}

/// One classical RK4 step with the input held constant (zero-order hold).
/// The switching mode is re-evaluated at every stage. After the step,
/// pressures are clamped to [P_out, P_tank], the mechanical stop pins the
/// angle at +-25 deg, and a sticking joint has its residual velocity
/// projected to zero.
pub fn rk4_step(
    state: &PlantState,
    u: &ControlInput,
    dt: f64,
    params: &ModelParameters,
    cfg: &PlantConfig,
) -> Result<PlantState> {
    debug_assert!(dt > 0.0);
    let x = state.as_array();
    let eval = |x: [f64; 4]| -> Result<[f64; 4]> {
        // Intermediate stages can momentarily overshoot the physical
        // envelope; the derivative is only defined inside it.
        let stage = PlantState::new(
            x[0].clamp(-cfg.stop_angle, cfg.stop_angle),
            x[1],
            x[2].clamp(params.p_floor(), params.p_tank),
            x[3].clamp(params.p_floor(), params.p_tank),
        );
        Ok(state_derivative(&stage, u, params, cfg)?.0)
    };
    let add = |x: [f64; 4], k: [f64; 4], s: f64| {
        [
            x[0] + s * k[0],
            x[1] + s * k[1],
            x[2] + s * k[2],
            x[3] + s * k[3],
        ]
    };
    let k1 = eval(x)?;
    let k2 = eval(add(x, k1, dt / 2.0))?;
    let k3 = eval(add(x, k2, dt / 2.0))?;
    let k4 = eval(add(x, k3, dt))?;
    let mut next = PlantState::from_array([
        x[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        x[2] + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        x[3] + dt / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
    ]);

    next.p1 = next.p1.clamp(params.p_floor(), params.p_tank);
    next.p2 = next.p2.clamp(params.p_floor(), params.p_tank);

    // Mechanical stop: pin outward motion at the travel limit.
    if next.psi >= cfg.stop_angle {
        next.psi = cfg.stop_angle;
        if next.psi_dot > 0.0 {
            next.psi_dot = 0.0;
        }
    } else if next.psi <= -cfg.stop_angle {
        next.psi = -cfg.stop_angle;
        if next.psi_dot < 0.0 {
            next.psi_dot = 0.0;
        }
    }

    // Stick projection of the residual velocity.
    let (l1m, l2m) = pam_lengths(next.psi, params)?;
    let f1 = contraction_force(l1m, next.p1, Muscle::One, params)?;
    let f2 = contraction_force(l2m, next.p2, Muscle::Two, params)?;
    let t_ext = joint_torque(next.psi, f1, f2, params) - params.k_s * next.psi;
    if let (_, FrictionMode::Stick) = friction_torque(&next, t_ext, params, cfg)? {
        next.psi_dot = 0.0;
    }
    Ok(next)
}

/// A simulation instance owning its state and RNG stream.
#[derive(Debug, Clone)]
pub struct Plant {
    pub state: PlantState,
    pub params: ModelParameters,
    pub cfg: PlantConfig,
    noise: NoiseSpec,
    rng: ChaCha8Rng,
}

impl Plant {
    pub fn new(state: PlantState, params: ModelParameters, cfg: PlantConfig, noise: NoiseSpec) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(noise.seed);
        Self {
            state,
            params,
            cfg,
            noise,
            rng,
        }
    }

    /// Advances the plant by `dt` split into `substeps` RK4 steps with the
    /// input held, then injects per-tick process noise and re-clamps.
    pub fn advance(&mut self, u: &ControlInput, dt: f64, substeps: usize) -> Result<ValveMode> {
        let h = dt / substeps as f64;
        let mode = state_derivative(&self.state, u, &self.params, &self.cfg)?.1;
        for _ in 0..substeps {
            self.state = rk4_step(&self.state, u, h, &self.params, &self.cfg)?;
        }
        if self.noise.q_diag.iter().any(|&q| q > 0.0) {
            let mut x = self.state.as_array();
            for (xi, &q) in x.iter_mut().zip(self.noise.q_diag.iter()) {
                if q > 0.0 {
                    let n: f64 = StandardNormal.sample(&mut self.rng);
                    *xi += q.sqrt() * n;
                }
            }
            self.state = PlantState::from_array(x);
            self.state.p1 = self.state.p1.clamp(self.params.p_floor(), self.params.p_tank);
            self.state.p2 = self.state.p2.clamp(self.params.p_floor(), self.params.p_tank);
            self.state.psi = self.state.psi.clamp(-self.cfg.stop_angle, self.cfg.stop_angle);
        }
        self.state.check_invariants(&self.params)?;
        Ok(mode)
    }

    /// Noisy pressure measurement (P1, P2).
    pub fn measure(&mut self) -> (f64, f64) {
        let mut meas = [self.state.p1, self.state.p2];
        for (m, &r) in meas.iter_mut().zip(self.noise.r_diag.iter()) {
            if r > 0.0 {
                let n: f64 = StandardNormal.sample(&mut self.rng);
                *m += r.sqrt() * n;
            }
        }
        (meas[0], meas[1])
    }

    /// True (noise-free) joint stiffness of the current state.
    pub fn true_stiffness(&self) -> Result<f64> {
        statics::joint_stiffness(self.state.psi, self.state.p1, self.state.p2, &self.params)
    }
}
