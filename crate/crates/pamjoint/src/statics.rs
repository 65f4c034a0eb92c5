//! Static (algebraic) model of the antagonistic PAM joint: identified
//! parameters, muscle geometry, contraction forces, joint torque, joint
//! stiffness and the static friction bound.
//!
//! All operations here are pure functions; angles are radians, pressures
//! absolute pascals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::Muscle;

/// Identified parameters of the antagonistic PAM actuator system.
///
/// Defaults carry the identified values of the desk-scale testbed in SI
/// units. Pressures are absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParameters {
    /// Shaft radius (m).
    pub r_p: f64,
    /// Seesaw radius (m).
    pub r: f64,
    /// PAM length at the horizontal seesaw position (m).
    pub l0: f64,
    /// Seesaw mass (kg).
    pub m: f64,
    /// Gravitational acceleration (m/s^2).
    pub g: f64,
    /// Source (tank) absolute pressure (Pa).
    pub p_tank: f64,
    /// Atmospheric pressure (Pa).
    pub p_out: f64,
    /// Specific heat ratio of air (-).
    pub k: f64,
    /// Ideal gas constant of air (J/(kg K)).
    pub r_gas: f64,
    /// Absolute temperature (K).
    pub t: f64,
    /// Seesaw moment of inertia (kg m^2).
    pub j: f64,
    /// Static torque coefficient of the seesaw (N m/rad).
    pub k_s: f64,
    /// Viscous friction coefficient (N m s).
    pub c_s: f64,
    /// Volume polynomial coefficient of l^2 (m).
    pub d1: f64,
    /// Volume polynomial coefficient of l (m^2).
    pub d2: f64,
    /// Volume polynomial constant term (m^3).
    pub d3: f64,
    /// Force model coefficients of muscle 1: F = (p_v11 l + p_v21) P + p_w11 l + p_w21.
    pub p_v11: f64,
    pub p_v21: f64,
    pub p_w11: f64,
    pub p_w21: f64,
    /// Force model coefficients of muscle 2.
    pub p_v12: f64,
    pub p_v22: f64,
    pub p_w12: f64,
    pub p_w22: f64,
    /// PDCV charge-side orifice areas (m^2), valves 1 and 2.
    pub a_11: f64,
    pub a_12: f64,
    /// PDCV discharge-side orifice areas (m^2); the identification campaign
    /// only pinned the charge side, so these default to the charge areas.
    pub a_21: f64,
    pub a_22: f64,
    /// Polytropic index while charging / holding.
    pub k1: f64,
    /// Polytropic index while discharging.
    pub k2: f64,
    /// PAM Coulomb friction coefficient T_p' (-).
    pub tp_coeff: f64,
    /// Shaft Coulomb friction coefficient (-).
    pub mu_s: f64,
}

impl Default for ModelParameters {
    fn default() -> Self {
        Self {
            r_p: 0.006,
            r: 0.0365,
            l0: 0.165,
            m: 0.256,
            g: 9.80,
            p_tank: 0.7100e6,
            p_out: 0.1013e6,
            k: 1.40,
            r_gas: 287.0,
            t: 293.0,
            j: 4.263e-4,
            k_s: 4.117e-4,
            c_s: 2.256e-3,
            d1: -2.440e-2,
            d2: 6.824e-3,
            d3: -4.254e-4,
            p_v11: 7.045e-3,
            p_v21: -1.017e-3,
            p_w11: -5.568e2,
            p_w21: 72.86,
            p_v12: 6.423e-3,
            p_v22: -9.184e-4,
            p_w12: -197.8,
            p_w22: -15.75,
            a_11: 5.184e-8,
            a_12: 7.776e-8,
            a_21: 5.184e-8,
            a_22: 7.776e-8,
            k1: 1.100,
            k2: 0.4545,
            tp_coeff: 4e8,
            mu_s: 0.2,
        }
    }
}

impl ModelParameters {
    /// Checks the structural invariants of the parameter set.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r", self.r),
            ("r_p", self.r_p),
            ("l0", self.l0),
            ("m", self.m),
            ("j", self.j),
            ("k_s", self.k_s),
            ("c_s", self.c_s),
            ("a_11", self.a_11),
            ("a_12", self.a_12),
            ("a_21", self.a_21),
            ("a_22", self.a_22),
            ("k1", self.k1),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.p_tank > self.p_out && self.p_out > 0.0) {
            return Err(Error::Config(format!(
                "pressures must satisfy p_tank > p_out > 0, got {} and {}",
                self.p_tank, self.p_out
            )));
        }
        if !(self.k > 1.0) {
            return Err(Error::Config(format!(
                "specific heat ratio must exceed 1, got {}",
                self.k
            )));
        }
        // Muscle volume must stay positive over the geometric range (+-30 deg).
        let span = 30.0_f64.to_radians();
        for i in 0..=60 {
            let psi = -span + i as f64 * span / 30.0;
            let (l1, l2) = pam_lengths(psi, self)?;
            pam_volume(l1, self)?;
            pam_volume(l2, self)?;
        }
        Ok(())
    }

    /// Force coefficient v_i(l) = p_v1i l + p_v2i slope/intercept pair.
    pub fn pv(&self, side: Muscle) -> (f64, f64) {
        match side {
            Muscle::One => (self.p_v11, self.p_v21),
            Muscle::Two => (self.p_v12, self.p_v22),
        }
    }

    /// Force coefficient w_i(l) = p_w1i l + p_w2i slope/intercept pair.
    pub fn pw(&self, side: Muscle) -> (f64, f64) {
        match side {
            Muscle::One => (self.p_w11, self.p_w21),
            Muscle::Two => (self.p_w12, self.p_w22),
        }
    }

    /// Returns a copy with the identified (estimated) parameters scaled by
    /// `(1 + frac)`; used as the model-mismatch knob for robustness runs.
    /// Lowest pressure a muscle state is clamped to. Kept one pascal above
    /// atmospheric because the pressure-dependent part of the breakaway
    /// friction diverges at P = P_out.
    pub fn p_floor(&self) -> f64 {
        self.p_out + 1.0
    }

    pub fn perturbed(&self, frac: f64) -> Self {
        let s = 1.0 + frac;
        Self {
            d1: self.d1 * s,
            d2: self.d2 * s,
            d3: self.d3 * s,
            p_v11: self.p_v11 * s,
            p_v21: self.p_v21 * s,
            p_w11: self.p_w11 * s,
            p_w21: self.p_w21 * s,
            p_v12: self.p_v12 * s,
            p_v22: self.p_v22 * s,
            p_w12: self.p_w12 * s,
            p_w22: self.p_w22 * s,
            a_11: self.a_11 * s,
            a_12: self.a_12 * s,
            a_21: self.a_21 * s,
            a_22: self.a_22 * s,
            k1: self.k1 * s,
            k2: self.k2 * s,
            tp_coeff: self.tp_coeff * s,
            mu_s: self.mu_s * s,
            ..self.clone()
        }
    }
}

/// Allowable input and pressure intervals of the testbed.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingSets {
    /// Per-valve voltage interval (V).
    pub u_min: f64,
    pub u_max: f64,
    /// Allowable pressure interval (Pa).
    pub p_min: f64,
    pub p_max: f64,
}

impl Default for OperatingSets {
    fn default() -> Self {
        Self {
            u_min: 0.0,
            u_max: 10.0,
            p_min: 200e3,
            p_max: 750e3,
        }
    }
}

/// Plant state x = [psi, psi_dot, P1, P2].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    /// Joint angle (rad).
    pub psi: f64,
    /// Joint angular velocity (rad/s).
    pub psi_dot: f64,
    /// Inner absolute pressure of muscle 1 (Pa).
    pub p1: f64,
    /// Inner absolute pressure of muscle 2 (Pa).
    pub p2: f64,
}

impl PlantState {
    pub fn new(psi: f64, psi_dot: f64, p1: f64, p2: f64) -> Self {
        Self {
            psi,
            psi_dot,
            p1,
            p2,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.psi, self.psi_dot, self.p1, self.p2]
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        Self::new(x[0], x[1], x[2], x[3])
    }

    pub fn pressure(&self, side: Muscle) -> f64 {
        match side {
            Muscle::One => self.p1,
            Muscle::Two => self.p2,
        }
    }

    /// Asserts the testbed range invariants: pressures within
    /// [P_out, P_tank] and |psi| within 25 deg plus a 5 deg margin.
    pub fn check_invariants(&self, params: &ModelParameters) -> Result<()> {
        let eps = 1e-6;
        for side in [Muscle::One, Muscle::Two] {
            let p = self.pressure(side);
            if p < params.p_out - eps || p > params.p_tank + eps {
                return Err(Error::PlantInvariant {
                    mode: 0,
                    detail: format!("pressure {p} Pa of muscle {side} left [P_out, P_tank]"),
                });
            }
        }
        if self.psi.abs() > 30.0_f64.to_radians() + eps {
            return Err(Error::PlantInvariant {
                mode: 0,
                detail: format!("joint angle {} rad exceeds the 30 deg envelope", self.psi),
            });
        }
        Ok(())
    }
}

/// Muscle lengths (l1, l2) at joint angle `psi`: l1 = L0 - r sin(psi),
/// l2 = L0 + r sin(psi). The pair sums to 2 L0 exactly.
pub fn pam_lengths(psi: f64, params: &ModelParameters) -> Result<(f64, f64)> {
    if !psi.is_finite() || psi.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::AngleOutOfRange(psi));
    }
    let dl = params.r * psi.sin();
    Ok((params.l0 - dl, params.l0 + dl))
}

/// Contraction force of one muscle: F = v_i(l) P + w_i(l), with v and w
/// affine in l. The affine fit is used verbatim; it may return negative
/// force at low pressure.
pub fn contraction_force(l: f64, pressure: f64, side: Muscle, params: &ModelParameters) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::NonpositiveLength(l));
    }
    let (v1, v2) = params.pv(side);
    let (w1, w2) = params.pw(side);
    Ok((v1 * l + v2) * pressure + w1 * l + w2)
}

/// Joint torque tau = r cos(psi) (F1 - F2).
pub fn joint_torque(psi: f64, f1: f64, f2: f64, params: &ModelParameters) -> f64 {
    params.r * psi.cos() * (f1 - f2)
}

/// alpha_i = p_v2i P + p_w2i, the length-independent part of the force map.
pub fn alpha(pressure: f64, side: Muscle, params: &ModelParameters) -> f64 {
    let (_, v2) = params.pv(side);
    let (_, w2) = params.pw(side);
    v2 * pressure + w2
}

/// Joint stiffness K_P = -d tau / d psi with the pressure-length coupling
/// neglected:
///
/// K_P = r sin(psi) (F1 - F2)
///     + r^2 cos^2(psi) ((F1 - alpha1)/l1 + (F2 - alpha2)/l2).
pub fn joint_stiffness(psi: f64, p1: f64, p2: f64, params: &ModelParameters) -> Result<f64> {
    let (l1, l2) = pam_lengths(psi, params)?;
    let f1 = contraction_force(l1, p1, Muscle::One, params)?;
    let f2 = contraction_force(l2, p2, Muscle::Two, params)?;
    let a1 = alpha(p1, Muscle::One, params);
    let a2 = alpha(p2, Muscle::Two, params);
    let c = psi.cos();
    Ok(params.r * psi.sin() * (f1 - f2)
        + params.r * params.r * c * c * ((f1 - a1) / l1 + (f2 - a2) / l2))
}

/// Total breakaway friction torque T_s + T_p at the given angle and
/// pressures:
///
/// T_s = r_p mu_s |F1 + F2 - M g|,
/// T_p = T_p' (1/(P1 - P_out)^2 + 1/(P2 - P_out)^2).
pub fn static_friction_bound(psi: f64, p1: f64, p2: f64, params: &ModelParameters) -> Result<f64> {
    for (side, p) in [(Muscle::One, p1), (Muscle::Two, p2)] {
        if p <= params.p_out {
            return Err(Error::PressureSingularity {
                side,
                pressure: p,
                p_out: params.p_out,
            });
        }
    }
    let (l1, l2) = pam_lengths(psi, params)?;
    let f1 = contraction_force(l1, p1, Muscle::One, params)?;
    let f2 = contraction_force(l2, p2, Muscle::Two, params)?;
    let t_s = params.r_p * params.mu_s * (f1 + f2 - params.m * params.g).abs();
    let d1 = p1 - params.p_out;
    let d2 = p2 - params.p_out;
    let t_p = params.tp_coeff * (1.0 / (d1 * d1) + 1.0 / (d2 * d2));
    Ok(t_s + t_p)
}

/// Inner volume of one muscle: V(l) = D1 l^2 + D2 l + D3.
pub fn pam_volume(l: f64, params: &ModelParameters) -> Result<f64> {
    let v = params.d1 * l * l + params.d2 * l + params.d3;
    if !(v > 0.0) {
        return Err(Error::NonpositiveVolume {
            length: l,
            volume: v,
        });
    }
    Ok(v)
}

/// dV/dl = 2 D1 l + D2.
pub fn pam_volume_slope(l: f64, params: &ModelParameters) -> f64 {
    2.0 * params.d1 * l + params.d2
}
