//! Reference admissible set of steady-state (angle, stiffness) pairs:
//! implicit steady-state angle solver, pressure-grid sweep, per-angle
//! stiffness envelopes for both friction branches, branch intersection
//! and point-in-polygon membership queries.

use crate::error::{Error, Result};
use crate::statics::{
    contraction_force, joint_stiffness, joint_torque, pam_lengths, static_friction_bound,
    ModelParameters, OperatingSets,
};
use crate::plant::Muscle;

/// Friction branch of the steady-state equation: the breakaway torque
/// enters with a minus sign (lower angle) or plus sign (upper angle).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    MinusFriction,
    PlusFriction,
}

impl Branch {
    pub fn label(&self) -> &'static str {
        match self {
            Branch::MinusFriction => "minus",
            Branch::PlusFriction => "plus",
        }
    }
}

/// One steady state of the pressure sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyPoint {
    pub p1: f64,
    pub p2: f64,
    pub psi_inf: f64,
    pub kp: f64,
    pub branch: Branch,
}

/// Steady-state residual k_s psi - tau(psi) +- (T_s + T_p)(psi).
fn residual(psi: f64, p1: f64, p2: f64, branch: Branch, params: &ModelParameters) -> Result<f64> {
    let (l1, l2) = pam_lengths(psi, params)?;
    let f1 = contraction_force(l1, p1, Muscle::One, params)?;
    let f2 = contraction_force(l2, p2, Muscle::Two, params)?;
    let tau = joint_torque(psi, f1, f2, params);
    let t_f = static_friction_bound(psi, p1, p2, params)?;
    let s = match branch {
        Branch::MinusFriction => 1.0,
        Branch::PlusFriction => -1.0,
    };
    Ok(params.k_s * psi - tau + s * t_f)
}

/// Solves the implicit steady-state equation
/// k_s psi = tau(psi, P1, P2) -+ (T_s + T_p) by bisection on
/// [-30 deg, +30 deg] to 1e-8 rad.
pub fn steady_state_angle(
    p1: f64,
    p2: f64,
    branch: Branch,
    params: &ModelParameters,
) -> Result<f64> {
    let span = 30.0_f64.to_radians();
    let mut lo = -span;
    let mut hi = span;
    let mut f_lo = residual(lo, p1, p2, branch, params)?;
    let f_hi = residual(hi, p1, p2, branch, params)?;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoEquilibrium {
            p1,
            p2,
            branch: branch.label(),
        });
    }
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        let f_mid = residual(mid, p1, p2, branch, params)?;
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Sweeps the allowable pressure box on a square grid of the given step,
/// solving both branches for each pair. Infeasible pairs and equilibria
/// outside the +-25 deg driving range are skipped and counted.
pub fn sweep(params: &ModelParameters, grid_step: f64) -> Result<(Vec<SteadyPoint>, usize)> {
    if !(grid_step > 0.0) {
        return Err(Error::Config(format!(
            "grid step must be positive, got {grid_step}"
        )));
    }
    let sets = OperatingSets::default();
    let range = 25.0_f64.to_radians();
    let n = ((sets.p_max - sets.p_min) / grid_step).round() as usize;
    let mut points = Vec::new();
    let mut skipped = 0usize;
    for i in 0..=n {
        let p1 = sets.p_min + i as f64 * grid_step;
        for jj in 0..=n {
            let p2 = sets.p_min + jj as f64 * grid_step;
            for branch in [Branch::MinusFriction, Branch::PlusFriction] {
                match steady_state_angle(p1, p2, branch, params) {
                    Ok(psi) if psi.abs() <= range => {
                        let kp = joint_stiffness(psi, p1, p2, params)?;
                        points.push(SteadyPoint {
                            p1,
                            p2,
                            psi_inf: psi,
                            kp,
                            branch,
                        });
                    }
                    Ok(_) | Err(Error::NoEquilibrium { .. }) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok((points, skipped))
}

/// Polygonal admissible region in the (psi, K_P) plane with its
/// generating cloud.
#[derive(Debug, Clone)]
pub struct AdmissibleSet {
    /// Closed simple polygon (not repeated at the end), counter-clockwise:
    /// lower envelope left to right, then upper envelope right to left.
    pub boundary: Vec<(f64, f64)>,
    pub cloud: Vec<SteadyPoint>,
    pub grid_step: f64,
    pub bin_width: f64,
    /// Per-bin [min, max] stiffness intervals of the intersection,
    /// keyed by bin center angle, ascending.
    pub bins: Vec<(f64, f64, f64)>,
}

/// Builds the admissible set from a sweep cloud: bins points by angle
/// (0.25 deg bins), forms each branch's per-bin stiffness envelope, and
/// intersects the two branch regions.
pub fn build_set(points: &[SteadyPoint], grid_step: f64) -> Result<AdmissibleSet> {
    build_set_with_bin(points, grid_step, 0.25_f64.to_radians())
}

pub fn build_set_with_bin(
    points: &[SteadyPoint],
    grid_step: f64,
    bin_width: f64,
) -> Result<AdmissibleSet> {
    if points.is_empty() {
        return Err(Error::EmptySet);
    }
    use std::collections::BTreeMap;
    // Keyed by integer bin index; value = per-branch (min, max).
    let mut envelopes: [BTreeMap<i64, (f64, f64)>; 2] = [BTreeMap::new(), BTreeMap::new()];
    for pt in points {
        let idx = (pt.psi_inf / bin_width).floor() as i64;
        let which = match pt.branch {
            Branch::MinusFriction => 0,
            Branch::PlusFriction => 1,
        };
        envelopes[which]
            .entry(idx)
            .and_modify(|(lo, hi)| {
                *lo = lo.min(pt.kp);
                *hi = hi.max(pt.kp);
            })
            .or_insert((pt.kp, pt.kp));
    }
    let mut bins = Vec::new();
    for (idx, (lo_m, hi_m)) in &envelopes[0] {
        if let Some((lo_p, hi_p)) = envelopes[1].get(idx) {
            let lo = lo_m.max(*lo_p);
            let hi = hi_m.min(*hi_p);
            if lo <= hi {
                let center = (*idx as f64 + 0.5) * bin_width;
                bins.push((center, lo, hi));
            }
        }
    }
    if bins.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut boundary: Vec<(f64, f64)> = bins.iter().map(|&(a, lo, _)| (a, lo)).collect();
    boundary.extend(bins.iter().rev().map(|&(a, _, hi)| (a, hi)));
    Ok(AdmissibleSet {
        boundary,
        cloud: points.to_vec(),
        grid_step,
        bin_width,
        bins,
    })
}

impl AdmissibleSet {
    /// Even-odd point-in-polygon test with on-boundary points counted
    /// inside.
    pub fn contains(&self, psi: f64, kp: f64) -> bool {
        contains_polygon(&self.boundary, psi, kp)
    }
}

fn on_segment(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> bool {
    if ax == bx && ay == by {
        return px == ax && py == ay;
    }
    let cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
    let scale = ((bx - ax).abs() + (by - ay).abs()).max(1.0);
    if cross.abs() > 1e-12 * scale {
        return false;
    }
    let dot = (px - ax) * (bx - ax) + (py - ay) * (by - ay);
    let len2 = (bx - ax) * (bx - ax) + (by - ay) * (by - ay);
    (0.0..=len2).contains(&dot)
}

/// Even-odd rule over a closed polygon given without the repeated last
/// vertex; boundary-inclusive.
pub fn contains_polygon(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    match poly.len() {
        0 => return false,
        1 => return poly[0] == (x, y),
        2 => return on_segment(poly[0].0, poly[0].1, poly[1].0, poly[1].1, x, y),
        _ => {}
    }
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (x1, y1) = poly[i];
        let (x2, y2) = poly[(i + 1) % n];
        if on_segment(x1, y1, x2, y2, x, y) {
            return true;
        }
        if (y1 > y) != (y2 > y) {
            let x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1);
            if x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}
