//! Plausibility cost terms and their weighted sum.
//!
//! Costs are diagnostics used for ranking candidates. They never reject a
//! trajectory on their own.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feasibility::KinematicProfile;
use crate::model::{ObjectSet, Trajectory};
use crate::pathref::CurvilinearCoord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Weights and parameters of the cost terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConfig {
    pub w_ref: f64,
    pub w_vel: f64,
    pub w_lat: f64,
    pub w_lon: f64,
    pub w_obs: f64,
    /// Desired cruise speed [m/s].
    pub v_desired: f64,
    /// Exponent of the speed penalty, 1 or 2.
    pub p: u8,
    /// Obstacle regularizer [m^2].
    pub epsilon: f64,
    pub obs_enabled: bool,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            w_ref: 1.0,
            w_vel: 1.0,
            w_lat: 1.0,
            w_lon: 1.0,
            w_obs: 1.0,
            v_desired: 7.0,
            p: 2,
            epsilon: 1e-6,
            obs_enabled: false,
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<(), CostError> {
        let weights = [
            ("w_ref", self.w_ref),
            ("w_vel", self.w_vel),
            ("w_lat", self.w_lat),
            ("w_lon", self.w_lon),
            ("w_obs", self.w_obs),
        ];
        for (name, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(CostError::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {w}"
                )));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(CostError::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !self.v_desired.is_finite() {
            return Err(CostError::InvalidArgument(
                "v_desired must be finite".into(),
            ));
        }
        check_exponent(self.p)
    }

    /// Same configuration with every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            w_ref: self.w_ref * c,
            w_vel: self.w_vel * c,
            w_lat: self.w_lat * c,
            w_lon: self.w_lon * c,
            w_obs: self.w_obs * c,
            ..*self
        }
    }
}

fn check_exponent(p: u8) -> Result<(), CostError> {
    if p == 1 || p == 2 {
        Ok(())
    } else {
        Err(CostError::InvalidArgument(format!(
            "p must be 1 or 2, got {p}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub j_ref: f64,
    pub j_vel: f64,
    pub j_lat: f64,
    pub j_lon: f64,
    pub j_obs: f64,
    pub j_sum: f64,
}

/// Sum of squared lateral offsets.
pub fn cost_ref(coords: &[CurvilinearCoord]) -> f64 {
    coords.iter().map(|c| c.d * c.d).sum()
}

/// Sum of |v_i - v_desired|^p.
pub fn cost_vel(traj: &Trajectory, v_desired: f64, p: u8) -> Result<f64, CostError> {
    check_exponent(p)?;
    Ok(traj
        .points()
        .iter()
        .map(|pt| {
            let dv = (pt.v - v_desired).abs();
            if p == 1 {
                dv
            } else {
                dv * dv
            }
        })
        .sum())
}

fn trapezoid(values: impl Iterator<Item = f64>, dt: f64) -> f64 {
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    for f in values {
        if let Some(p) = prev {
            total += 0.5 * (p + f) * dt;
        }
        prev = Some(f);
    }
    total
}

/// Integrated squared lateral and longitudinal acceleration, returned as
/// `(j_lat, j_lon)`.
///
/// Lateral acceleration is v^2 * kappa from the profile; longitudinal is the
/// acceleration carried by each point. Integration uses the trapezoidal rule.
pub fn cost_accel(traj: &Trajectory, profile: &KinematicProfile) -> (f64, f64) {
    let pts = traj.points();
    let dt = traj.dt();
    let j_lat = trapezoid(
        pts.iter().zip(&profile.kappa).map(|(p, k)| {
            let a_lat = p.v * p.v * k;
            a_lat * a_lat
        }),
        dt,
    );
    let j_lon = trapezoid(pts.iter().map(|p| p.a * p.a), dt);
    (j_lat, j_lon)
}

/// Inverse-square proximity to predicted objects, summed over points and objects.
pub fn cost_obs(traj: &Trajectory, objects: &ObjectSet, epsilon: f64) -> f64 {
    let mut total = 0.0;
    for (i, p) in traj.points().iter().enumerate() {
        for obj in objects.objects() {
            if let Some([ox, oy]) = obj.state_at(i) {
                let (dx, dy) = (p.x - ox, p.y - oy);
                total += 1.0 / (dx * dx + dy * dy + epsilon);
            }
        }
    }
    total
}

/// Everything the individual terms need.
#[derive(Debug, Clone, Copy)]
pub struct CostInputs<'a> {
    pub trajectory: &'a Trajectory,
    pub profile: &'a KinematicProfile,
    pub coords: &'a [CurvilinearCoord],
    pub objects: Option<&'a ObjectSet>,
}

/// Weighted sum of the enabled terms already evaluated in `b`.
pub fn weighted_sum(b: &CostBreakdown, config: &CostConfig) -> f64 {
    config.w_ref * b.j_ref
        + config.w_vel * b.j_vel
        + config.w_lat * b.j_lat
        + config.w_lon * b.j_lon
        + config.w_obs * b.j_obs
}

pub fn cost_total(inputs: CostInputs<'_>, config: &CostConfig) -> Result<CostBreakdown, CostError> {
    config.validate()?;
    let j_ref = cost_ref(inputs.coords);
    let j_vel = cost_vel(inputs.trajectory, config.v_desired, config.p)?;
    let (j_lat, j_lon) = cost_accel(inputs.trajectory, inputs.profile);
    let j_obs = match (config.obs_enabled, inputs.objects) {
        (true, Some(objects)) => cost_obs(inputs.trajectory, objects, config.epsilon),
        _ => 0.0,
    };
    let mut b = CostBreakdown {
        j_ref,
        j_vel,
        j_lat,
        j_lon,
        j_obs,
        j_sum: 0.0,
    };
    b.j_sum = weighted_sum(&b, config);
    Ok(b)
}
