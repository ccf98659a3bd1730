#![allow(dead_code)]

use std::f64::consts::PI;

use trajguard::{ConstraintId, ReferencePath, Trajectory, VehicleLimits};

fn wrap(d: f64) -> f64 {
    let w = d.sin().atan2(d.cos());
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Re-derives every constraint per point from raw samples.
///
/// The difference at point i uses the pair (j, j + 1) with j = min(i, n - 2).
#[allow(clippy::needless_range_loop)]
pub fn oracle_violations(traj: &Trajectory, limits: &VehicleLimits) -> Vec<(ConstraintId, usize)> {
    let p = traj.points();
    let n = p.len();
    let dt = traj.dt();
    let pair = |i: usize| i.min(n - 2);
    let heading_step = |i: usize| {
        let j = pair(i);
        wrap(p[j + 1].psi - p[j].psi)
    };
    let yaw_rate = |i: usize| heading_step(i) / dt;
    let curvature = |i: usize| {
        if p[i].v > 1e-3 {
            yaw_rate(i) / p[i].v
        } else {
            let j = pair(i);
            let ds = ((p[j + 1].x - p[j].x).powi(2) + (p[j + 1].y - p[j].y).powi(2)).sqrt();
            heading_step(i) / ds.max(1e-6)
        }
    };
    let curvature_rate = |i: usize| {
        let j = pair(i);
        (curvature(j + 1) - curvature(j)) / dt
    };

    let slack = 1.0 + 1e-9;
    let kappa_max = limits.delta_max().tan() / limits.wheelbase();
    let mut out = Vec::new();
    for i in 0..n {
        let v = p[i].v;
        let a_perm = if v > limits.v_switch() {
            limits.a_max() * limits.v_switch() / v
        } else {
            limits.a_max()
        };
        if p[i].a > a_perm * slack {
            out.push((ConstraintId::AccelUpper, i));
        }
        if p[i].a < -limits.a_max() * slack {
            out.push((ConstraintId::AccelLower, i));
        }
        if curvature(i).abs() > kappa_max * slack {
            out.push((ConstraintId::Curvature, i));
        }
        if curvature_rate(i).abs() > limits.kappa_dot_max() * slack {
            out.push((ConstraintId::CurvatureRate, i));
        }
        if yaw_rate(i).abs() > kappa_max * v * slack {
            out.push((ConstraintId::YawRate, i));
        }
    }
    out
}

/// Distance to the nearest sample of the path taken every `step` metres,
/// with the arc length of that sample.
pub fn dense_projection(point: [f64; 2], path: &ReferencePath, step: f64) -> (f64, f64) {
    let total = path.total_length();
    let count = (total / step).ceil() as usize;
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=count {
        let s = (k as f64 * step).min(total);
        let [x, y] = path.point_at(s);
        let d = (point[0] - x).hypot(point[1] - y);
        if d < best.0 {
            best = (d, s);
        }
    }
    best
}
