//! Unscented Kalman filter estimating the full joint state from pressure
//! measurements only, with derived force, torque and stiffness outputs.
//!
//! Classical 2n+1 symmetric sigma-point set with plain-kappa weights; the
//! matrix square root is a symmetric eigendecomposition with negative
//! eigenvalues clipped at zero, which tolerates the large scale disparity
//! between the angle states (1e-5) and pressure states (1e6).

use nalgebra::{Matrix2, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{rk4_step, ControlInput, Muscle, PlantConfig};
use crate::statics::{
    alpha, contraction_force, joint_torque, pam_lengths, ModelParameters, PlantState,
};

const N: usize = 4;

/// Filter tuning: initial covariance, process and measurement covariance
/// diagonals, and the sigma-point spread parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UkfConfig {
    pub p0_diag: [f64; 4],
    pub q_diag: [f64; 4],
    pub r_diag: [f64; 2],
    pub kappa: f64,
    /// Relative perturbation applied to the filter's copy of the plant
    /// parameters (model-mismatch robustness knob). Zero = perfect model.
    pub model_mismatch: f64,
}

impl Default for UkfConfig {
    fn default() -> Self {
        Self {
            p0_diag: [1e-5, 1e-4, 1e6, 1e6],
            q_diag: [1e-5, 1e-4, 1e6, 1e6],
            r_diag: [1e8, 1e8],
            kappa: 0.0,
            model_mismatch: 0.0,
        }
    }
}

impl UkfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p0_diag.iter().chain(self.q_diag.iter()).any(|&v| v < 0.0) {
            return Err(Error::Config("P0 and Q diagonals must be nonnegative".into()));
        }
        if self.r_diag.iter().any(|&v| v <= 0.0) {
            return Err(Error::Config("R diagonal must be positive".into()));
        }
        if N as f64 + self.kappa <= 0.0 {
            return Err(Error::Config(format!(
                "n + kappa must be positive, got kappa = {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// Filter output: state mean, covariance and the derived actuator
/// quantities used by the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub mean: PlantState,
    pub cov: Matrix4<f64>,
    pub f1: f64,
    pub f2: f64,
    pub tau: f64,
    pub kp: f64,
}

/// Symmetric sigma-point set: 2n+1 points with W0 = kappa/(n+kappa) and
/// Wi = 1/(2(n+kappa)). The PSD square root clips negative eigenvalues.
pub fn sigma_points(
    mean: &Vector4<f64>,
    cov: &Matrix4<f64>,
    kappa: f64,
) -> Result<(Vec<Vector4<f64>>, Vec<f64>)> {
    let n = N as f64;
    let scaled = cov.scale(n + kappa);
    let eig = scaled.symmetric_eigen();
    let mut root = Matrix4::zeros();
    for i in 0..N {
        let lam = eig.eigenvalues[i].max(0.0);
        let col = eig.eigenvectors.column(i) * lam.sqrt();
        root.set_column(i, &col);
    }
    if !root.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical(format!(
            "sigma-point square root failed: eigenvalues {:?}",
            eig.eigenvalues.as_slice()
        )));
    }
    let mut points = Vec::with_capacity(2 * N + 1);
    let mut weights = Vec::with_capacity(2 * N + 1);
    points.push(*mean);
    weights.push(kappa / (n + kappa));
    for i in 0..N {
        let col = root.column(i).into_owned();
        points.push(mean + col);
        points.push(mean - col);
        let w = 1.0 / (2.0 * (n + kappa));
        weights.push(w);
        weights.push(w);
    }
    Ok((points, weights))
}

fn weighted_mean(points: &[Vector4<f64>], weights: &[f64]) -> Vector4<f64> {
    points
        .iter()
        .zip(weights)
        .fold(Vector4::zeros(), |acc, (p, &w)| acc + p * w)
}

fn symmetrize(m: &mut Matrix4<f64>) {
    let t = m.transpose();
    *m = (*m + t) * 0.5;
}

/// One UKF instance per control loop; owns the (possibly perturbed) model
/// copy used for sigma-point propagation.
#[derive(Debug, Clone)]
pub struct Ukf {
    pub cfg: UkfConfig,
    params: ModelParameters,
    plant_cfg: PlantConfig,
}

impl Ukf {
    pub fn new(cfg: UkfConfig, params: &ModelParameters, plant_cfg: PlantConfig) -> Result<Self> {
        cfg.validate()?;
        let params = if cfg.model_mismatch != 0.0 {
            params.perturbed(cfg.model_mismatch)
        } else {
            params.clone()
        };
        Ok(Self {
            cfg,
            params,
            plant_cfg,
        })
    }

    /// Initial estimate at the given mean with the configured P0.
    pub fn initial_estimate(&self, mean: PlantState) -> Result<Estimate> {
        let cov = Matrix4::from_diagonal(&Vector4::from_row_slice(&self.cfg.p0_diag));
        self.finish_estimate(mean, cov)
    }

    fn finish_estimate(&self, mean: PlantState, mut cov: Matrix4<f64>) -> Result<Estimate> {
        symmetrize(&mut cov);
        check_psd(&cov)?;
        let (f1, f2, tau, kp) = derive_outputs(&mean, &self.params)?;
        Ok(Estimate {
            mean,
            cov,
            f1,
            f2,
            tau,
            kp,
        })
    }

    /// Time update: propagates every sigma point through one noise-free
    /// plant step and recombines, adding Q.
    pub fn predict(&self, est: &Estimate, u: &ControlInput, dt: f64) -> Result<Estimate> {
        self.predict_with(est, |x| {
            // The plant model is only defined on the physical envelope;
            // sigma points spread outside it are projected back first.
            let state = PlantState::new(
                x[0].clamp(-self.plant_cfg.stop_angle, self.plant_cfg.stop_angle),
                x[1],
                x[2].clamp(self.params.p_floor(), self.params.p_tank),
                x[3].clamp(self.params.p_floor(), self.params.p_tank),
            );
            let s = rk4_step(&state, u, dt, &self.params, &self.plant_cfg)?;
            Ok(Vector4::from_row_slice(&s.as_array()))
        })
    }

    /// Time update through an arbitrary propagation map; the nonlinear
    /// plant step and test surrogates share this path.
    pub fn predict_with<F>(&self, est: &Estimate, mut propagate: F) -> Result<Estimate>
    where
        F: FnMut(&Vector4<f64>) -> Result<Vector4<f64>>,
    {
        let mean = Vector4::from_row_slice(&est.mean.as_array());
        let (points, weights) = sigma_points(&mean, &est.cov, self.cfg.kappa)?;
        let propagated: Vec<Vector4<f64>> = points
            .iter()
            .map(|p| propagate(p))
            .collect::<Result<_>>()?;
        let new_mean = weighted_mean(&propagated, &weights);
        let mut cov = Matrix4::from_diagonal(&Vector4::from_row_slice(&self.cfg.q_diag));
        for (p, &w) in propagated.iter().zip(&weights) {
            let d = p - new_mean;
            cov += (d * d.transpose()) * w;
        }
        self.finish_estimate(
            PlantState::from_array([new_mean[0], new_mean[1], new_mean[2], new_mean[3]]),
            cov,
        )
    }

    /// Measurement update with the linear pressure observation
    /// y = [P1, P2].
    pub fn update(&self, est: &Estimate, meas: (f64, f64)) -> Result<Estimate> {
        let mean = Vector4::from_row_slice(&est.mean.as_array());
        let (points, weights) = sigma_points(&mean, &est.cov, self.cfg.kappa)?;
        let obs = |x: &Vector4<f64>| Vector2::new(x[2], x[3]);
        let y_pred: Vector2<f64> = points
            .iter()
            .zip(&weights)
            .fold(Vector2::zeros(), |acc, (p, &w)| acc + obs(p) * w);
        let r = Matrix2::from_diagonal(&Vector2::new(self.cfg.r_diag[0], self.cfg.r_diag[1]));
        let mut s = r;
        let mut c: Matrix4x2<f64> = Matrix4x2::zeros();
        for (p, &w) in points.iter().zip(&weights) {
            let dy = obs(p) - y_pred;
            let dx = p - mean;
            s += (dy * dy.transpose()) * w;
            c += (dx * dy.transpose()) * w;
        }
        let s_inv = s.try_inverse().ok_or_else(|| {
            Error::Numerical(format!("innovation covariance singular: {s:?}"))
        })?;
        let gain = c * s_inv;
        let innov = Vector2::new(meas.0, meas.1) - y_pred;
        let new_mean = mean + gain * innov;
        let cov = est.cov - gain * s * gain.transpose();
        self.finish_estimate(
            PlantState::from_array([new_mean[0], new_mean[1], new_mean[2], new_mean[3]]),
            cov,
        )
    }
}

fn check_psd(cov: &Matrix4<f64>) -> Result<()> {
    let eig = cov.symmetric_eigen();
    let min = eig.eigenvalues.min();
    let trace = cov.trace();
    if min < -1e-9 * trace.max(1.0) {
        return Err(Error::Numerical(format!(
            "covariance lost positive semidefiniteness: min eigenvalue {min}, trace {trace}"
        )));
    }
    Ok(())
}

/// Estimated forces, torque and stiffness from a state mean.
pub fn derive_outputs(mean: &PlantState, params: &ModelParameters) -> Result<(f64, f64, f64, f64)> {
    let (l1, l2) = pam_lengths(mean.psi, params)?;
    let f1 = contraction_force(l1, mean.p1, Muscle::One, params)?;
    let f2 = contraction_force(l2, mean.p2, Muscle::Two, params)?;
    let tau = joint_torque(mean.psi, f1, f2, params);
    let a1 = alpha(mean.p1, Muscle::One, params);
    let a2 = alpha(mean.p2, Muscle::Two, params);
    let c = mean.psi.cos();
    let kp = params.r * mean.psi.sin() * (f1 - f2)
        + params.r * params.r * c * c * ((f1 - a1) / l1 + (f2 - a2) / l2);
    Ok((f1, f2, tau, kp))
}
