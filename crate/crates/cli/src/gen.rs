//! Deterministic scenario generators for replay datasets.
//!
//! Every generated trajectory comes with ground truth: which points must
//! violate which constraint, and closed-form cost terms where they exist.

use std::collections::BTreeSet;

use anyhow::{bail, ensure, Result};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use trajguard::feasibility::permissible_acceleration;
use trajguard::model::NANOS_PER_MILLI;
use trajguard::transport::{Payload, ReplaySchedule};
use trajguard::{
    ConstraintId, Nanos, ObjectSet, PredictedObject, ReferencePath, Trajectory, TrajectoryPoint,
    VehicleLimits,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Straight,
    Arc,
    LaneChange,
    InfeasibleAccel,
    InfeasibleCurvature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub kind: ScenarioKind,
    pub count: usize,
    pub points: usize,
    pub speed: f64,
    pub dt: f64,
    pub radius: f64,
    pub period_ms: u64,
    /// `(trajectory index, delay in ms)`: replaces the period before that index.
    pub gaps: Vec<(usize, u64)>,
    pub seed: u64,
    pub objects: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Straight,
            count: 1,
            points: 30,
            speed: 7.0,
            dt: 0.1,
            radius: 20.0,
            period_ms: 50,
            gaps: Vec::new(),
            seed: 0,
            objects: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedViolation {
    pub constraint: ConstraintId,
    pub index: usize,
}

/// Closed-form cost terms; `None` where no closed form applies.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AnalyticCosts {
    pub j_vel: Option<f64>,
    pub j_lat: Option<f64>,
    pub j_lon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthEntry {
    pub id: u64,
    pub offset_ns: Nanos,
    /// `None` when feasibility depends on numerics rather than construction.
    pub expected_feasible: Option<bool>,
    pub violations: Vec<ExpectedViolation>,
    /// Closed forms assume exponent 2 on the speed term.
    pub analytic: AnalyticCosts,
    pub v_desired: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub limits: VehicleLimits,
    pub trajectories: Vec<TruthEntry>,
}

pub struct Generated {
    pub schedule: ReplaySchedule,
    pub truth: GroundTruth,
    pub path: ReferencePath,
}

fn straight_points(n: usize, v: f64, dt: f64, y: f64) -> Vec<TrajectoryPoint> {
    (0..n)
        .map(|i| TrajectoryPoint::new(v * dt * i as f64, y, v, 0.0, 0.0))
        .collect()
}

/// Counter-clockwise arc from the origin heading +x.
pub fn arc_points(n: usize, v: f64, dt: f64, radius: f64) -> Vec<TrajectoryPoint> {
    (0..n)
        .map(|i| {
            let theta = v * dt * i as f64 / radius;
            TrajectoryPoint::new(
                radius * theta.sin(),
                radius * (1.0 - theta.cos()),
                v,
                0.0,
                theta,
            )
        })
        .collect()
}

/// Quintic lateral blend to `offset` over the horizon at forward speed `v`.
pub fn lane_change_points(n: usize, v: f64, dt: f64, offset: f64) -> Vec<TrajectoryPoint> {
    let horizon = dt * (n - 1) as f64;
    (0..n)
        .map(|i| {
            let t = dt * i as f64;
            let tau = t / horizon;
            let y = offset * (10.0 * tau.powi(3) - 15.0 * tau.powi(4) + 6.0 * tau.powi(5));
            let vy =
                offset * (30.0 * tau.powi(2) - 60.0 * tau.powi(3) + 30.0 * tau.powi(4)) / horizon;
            let ay = offset * (60.0 * tau - 180.0 * tau.powi(2) + 120.0 * tau.powi(3))
                / (horizon * horizon);
            let speed = v.hypot(vy);
            TrajectoryPoint::new(v * t, y, speed, vy * ay / speed, vy.atan2(v))
        })
        .collect()
}

fn offsets(p: &GenParams) -> Vec<Nanos> {
    let mut t = 0;
    (0..p.count)
        .map(|i| {
            if i > 0 {
                let ms = p
                    .gaps
                    .iter()
                    .find(|g| g.0 == i)
                    .map_or(p.period_ms, |g| g.1);
                t += ms * NANOS_PER_MILLI;
            }
            t
        })
        .collect()
}

fn constant_speed_costs(n: usize, v: f64, v_desired: f64, j_lat: f64) -> AnalyticCosts {
    AnalyticCosts {
        j_vel: Some(n as f64 * (v - v_desired).abs().powi(2)),
        j_lat: Some(j_lat),
        j_lon: Some(0.0),
    }
}

pub fn generate(p: &GenParams, limits: &VehicleLimits, v_desired: f64) -> Result<Generated> {
    ensure!(p.count >= 1, "count must be at least 1");
    ensure!(
        p.points >= Trajectory::MIN_POINTS,
        "need at least {} points",
        Trajectory::MIN_POINTS
    );
    ensure!(p.dt > 0.0 && p.dt.is_finite(), "dt must be positive");
    ensure!(
        p.speed >= 0.0 && p.speed.is_finite(),
        "speed must be non-negative"
    );
    if p.kind == ScenarioKind::Arc && (p.radius.is_nan() || p.radius <= 0.0) {
        bail!("arc radius must be positive");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n = p.points;
    let v = p.speed;
    let horizon = p.dt * (n - 1) as f64;
    let mut items = Vec::new();
    let mut truth = Vec::new();
    let mut max_x: f64 = 0.0;

    if p.objects > 0 {
        // objects cruise in the neighbouring lane
        let objects = (0..p.objects)
            .map(|k| {
                let lead = 10.0 * k as f64;
                let states = (0..n).map(|i| [lead + v * p.dt * i as f64, 4.0]).collect();
                PredictedObject::new(k as u64, states)
            })
            .collect::<Result<Vec<_>, _>>()?;
        items.push((0, Payload::Objects(ObjectSet::new(0, objects)?)));
    }

    for (i, offset) in offsets(p).into_iter().enumerate() {
        let id = i as u64 + 1;
        let (points, expected_feasible, violations, analytic) = match p.kind {
            ScenarioKind::Straight => (
                straight_points(n, v, p.dt, 0.0),
                Some(true),
                vec![],
                constant_speed_costs(n, v, v_desired, 0.0),
            ),
            ScenarioKind::Arc => {
                let kappa = 1.0 / p.radius;
                let feasible = kappa <= limits.kappa_max();
                (
                    arc_points(n, v, p.dt, p.radius),
                    Some(feasible),
                    vec![],
                    constant_speed_costs(n, v, v_desired, v.powi(4) * kappa * kappa * horizon),
                )
            }
            ScenarioKind::LaneChange => {
                let offset = rng.gen_range(-3.5..3.5);
                (
                    lane_change_points(n, v, p.dt, offset),
                    None,
                    vec![],
                    AnalyticCosts::default(),
                )
            }
            ScenarioKind::InfeasibleAccel => {
                let mut pts = straight_points(n, v, p.dt, 0.0);
                let k = rng.gen_range(1..=3.min(n));
                let picked: BTreeSet<usize> = sample(&mut rng, n, k).into_iter().collect();
                let mut violations = Vec::new();
                for &idx in &picked {
                    let (a, constraint) = if rng.gen_bool(0.5) {
                        (
                            permissible_acceleration(v, limits)? + 1.0,
                            ConstraintId::AccelUpper,
                        )
                    } else {
                        (-limits.a_max() - 1.0, ConstraintId::AccelLower)
                    };
                    pts[idx].a = a;
                    violations.push(ExpectedViolation {
                        constraint,
                        index: idx,
                    });
                }
                (pts, Some(false), violations, AnalyticCosts::default())
            }
            ScenarioKind::InfeasibleCurvature => {
                ensure!(v > 0.0, "infeasible-curvature needs a positive speed");
                let radius = 1.0 / (1.05 * limits.kappa_max());
                let mut violations = Vec::new();
                for index in 0..n {
                    violations.push(ExpectedViolation {
                        constraint: ConstraintId::Curvature,
                        index,
                    });
                    violations.push(ExpectedViolation {
                        constraint: ConstraintId::YawRate,
                        index,
                    });
                }
                (
                    arc_points(n, v, p.dt, radius),
                    Some(false),
                    violations,
                    AnalyticCosts::default(),
                )
            }
        };
        max_x = points.iter().fold(max_x, |m, q| m.max(q.x));
        let traj = Trajectory::new(id, offset, p.dt, points)?;
        items.push((offset, Payload::Trajectory(traj)));
        truth.push(TruthEntry {
            id,
            offset_ns: offset,
            expected_feasible,
            violations,
            analytic,
            v_desired,
        });
    }

    Ok(Generated {
        schedule: ReplaySchedule::from_payloads(items)?,
        truth: GroundTruth {
            kind: p.kind,
            seed: p.seed,
            limits: *limits,
            trajectories: truth,
        },
        path: ReferencePath::straight([0.0, 0.0], [max_x + 50.0, 0.0])?,
    })
}

/// Parses `INDEX:MS`.
pub fn parse_gap(s: &str) -> Result<(usize, u64), String> {
    let (idx, ms) = s
        .split_once(':')
        .ok_or_else(|| format!("expected INDEX:MS, got {s:?}"))?;
    let idx = idx
        .trim()
        .parse()
        .map_err(|e| format!("bad index in {s:?}: {e}"))?;
    let ms = ms
        .trim()
        .parse()
        .map_err(|e| format!("bad delay in {s:?}: {e}"))?;
    Ok((idx, ms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use trajguard::feasibility::check_feasibility;

    fn gen(kind: ScenarioKind, seed: u64) -> Generated {
        let p = GenParams {
            kind,
            count: 5,
            seed,
            ..GenParams::default()
        };
        generate(&p, &VehicleLimits::default(), 7.0).unwrap()
    }

    #[test]
    fn same_seed_same_dataset() {
        for kind in [ScenarioKind::LaneChange, ScenarioKind::InfeasibleAccel] {
            assert_eq!(gen(kind, 3).schedule, gen(kind, 3).schedule);
            assert_ne!(gen(kind, 3).schedule, gen(kind, 4).schedule);
        }
    }

    #[test]
    fn designated_violations_are_exactly_reported() {
        let limits = VehicleLimits::default();
        for kind in [
            ScenarioKind::InfeasibleAccel,
            ScenarioKind::InfeasibleCurvature,
        ] {
            let g = gen(kind, 11);
            for (traj, truth) in g.schedule.trajectories().zip(&g.truth.trajectories) {
                let got: Vec<(ConstraintId, usize)> = check_feasibility(traj, &limits)
                    .violations
                    .iter()
                    .map(|v| (v.constraint, v.index))
                    .collect();
                let want: Vec<(ConstraintId, usize)> = truth
                    .violations
                    .iter()
                    .map(|v| (v.constraint, v.index))
                    .collect();
                assert_eq!(got, want, "{kind:?} trajectory {}", traj.id());
            }
        }
    }

    #[test]
    fn feasible_kinds_pass() {
        let limits = VehicleLimits::default();
        for kind in [
            ScenarioKind::Straight,
            ScenarioKind::Arc,
            ScenarioKind::LaneChange,
        ] {
            for traj in gen(kind, 1).schedule.trajectories() {
                assert!(check_feasibility(traj, &limits).feasible, "{kind:?}");
            }
        }
    }

    #[test]
    fn gaps_replace_the_period() {
        let p = GenParams {
            count: 4,
            gaps: vec![(2, 150)],
            ..GenParams::default()
        };
        let ms = NANOS_PER_MILLI;
        assert_eq!(offsets(&p), vec![0, 50 * ms, 200 * ms, 250 * ms]);
        assert_eq!(parse_gap("2:150"), Ok((2, 150)));
        assert!(parse_gap("2-150").is_err());
    }
}
