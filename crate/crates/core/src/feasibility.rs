//! Kinematic feasibility of a trajectory against a [`VehicleLimits`] envelope.
//!
//! Continuous-time bounds are checked pointwise on a discrete profile built
//! with forward differences. The last index repeats the previous difference so
//! every point carries a value.

use crate::model::{
    normalize_angle, ConstraintId, ModelError, Trajectory, VehicleLimits, Violation,
};

/// Below this speed curvature is taken from heading change per arc length.
pub const V_EPS: f64 = 1e-3;
/// Lower bound on the arc-length denominator in the geometric fallback.
pub const S_EPS: f64 = 1e-6;
/// Relative slack applied to every limit comparison.
pub const LIMIT_TOL: f64 = 1e-9;

/// Allowed forward acceleration at speed `v`.
///
/// Above `v_switch` the envelope decays as a_max * v_switch / v; at or below it
/// the full a_max is available.
pub fn permissible_acceleration(v: f64, limits: &VehicleLimits) -> Result<f64, ModelError> {
    if v.is_nan() || v < 0.0 {
        return Err(ModelError::InvalidArgument(format!(
            "speed must be non-negative, got {v}"
        )));
    }
    Ok(if v > limits.v_switch() {
        limits.a_max() * (limits.v_switch() / v)
    } else {
        limits.a_max()
    })
}

/// Per-point derived kinematics. All arrays have the trajectory's length.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicProfile {
    /// Distance to the next point [m].
    pub ds: Vec<f64>,
    /// Curvature [1/m].
    pub kappa: Vec<f64>,
    /// Curvature rate [1/(m s)].
    pub kappa_dot: Vec<f64>,
    /// Yaw rate [rad/s].
    pub yaw_rate: Vec<f64>,
}

impl KinematicProfile {
    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }
}

/// Forward differences; index `n - 1` copies index `n - 2`.
fn forward_diff(values: &[f64], dt: f64) -> Vec<f64> {
    let mut out: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    out.push(*out.last().expect("at least two values"));
    out
}

pub fn derive_profile(traj: &Trajectory) -> KinematicProfile {
    let pts = traj.points();
    let dt = traj.dt();
    let n = pts.len();

    let mut dpsi = Vec::with_capacity(n);
    let mut ds = Vec::with_capacity(n);
    for w in pts.windows(2) {
        // Both headings are finite, so normalization cannot fail.
        dpsi.push(normalize_angle(w[1].psi - w[0].psi).unwrap_or(0.0));
        ds.push((w[1].x - w[0].x).hypot(w[1].y - w[0].y));
    }
    dpsi.push(dpsi[n - 2]);
    ds.push(ds[n - 2]);

    let yaw_rate: Vec<f64> = dpsi.iter().map(|d| d / dt).collect();
    let kappa: Vec<f64> = (0..n)
        .map(|i| {
            let v = pts[i].v;
            if v > V_EPS {
                yaw_rate[i] / v
            } else {
                dpsi[i] / ds[i].max(S_EPS)
            }
        })
        .collect();
    let kappa_dot = forward_diff(&kappa, dt);

    KinematicProfile {
        ds,
        kappa,
        kappa_dot,
        yaw_rate,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

fn exceeds(measured: f64, limit: f64) -> bool {
    measured > limit * (1.0 + LIMIT_TOL)
}

/// Checks every point against the acceleration, curvature, curvature-rate and
/// yaw-rate envelopes. All violations are collected in (index, constraint)
/// order.
pub fn check_feasibility(traj: &Trajectory, limits: &VehicleLimits) -> FeasibilityReport {
    let profile = derive_profile(traj);
    check_profile(traj, &profile, limits)
}

/// Same as [`check_feasibility`] with a precomputed profile.
pub fn check_profile(
    traj: &Trajectory,
    profile: &KinematicProfile,
    limits: &VehicleLimits,
) -> FeasibilityReport {
    let kappa_max = limits.kappa_max();
    let mut violations = Vec::new();
    let mut push = |constraint, index, measured, limit| {
        violations.push(Violation {
            constraint,
            index,
            measured,
            limit,
        })
    };

    for (i, p) in traj.points().iter().enumerate() {
        // v >= 0 is a trajectory invariant.
        let a_perm = permissible_acceleration(p.v, limits).unwrap_or(limits.a_max());
        if exceeds(p.a, a_perm) {
            push(ConstraintId::AccelUpper, i, p.a, a_perm);
        }
        if -p.a > limits.a_max() * (1.0 + LIMIT_TOL) {
            push(ConstraintId::AccelLower, i, p.a, -limits.a_max());
        }
        let kappa = profile.kappa[i].abs();
        if exceeds(kappa, kappa_max) {
            push(ConstraintId::Curvature, i, kappa, kappa_max);
        }
        let kappa_dot = profile.kappa_dot[i].abs();
        if exceeds(kappa_dot, limits.kappa_dot_max()) {
            push(
                ConstraintId::CurvatureRate,
                i,
                kappa_dot,
                limits.kappa_dot_max(),
            );
        }
        let yaw_rate = profile.yaw_rate[i].abs();
        let yaw_limit = kappa_max * p.v;
        if exceeds(yaw_rate, yaw_limit) {
            push(ConstraintId::YawRate, i, yaw_rate, yaw_limit);
        }
    }

    FeasibilityReport {
        feasible: violations.is_empty(),
        violations,
    }
}
