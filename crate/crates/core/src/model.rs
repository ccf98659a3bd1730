//! Domain types shared by every stage of the supervisor.
//!
//! Everything in here is immutable after construction. Constructors and
//! deserialization run the same validation, so a value that exists satisfies
//! its invariants.

use std::collections::HashSet;
use std::f64::consts::{PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integer nanoseconds. All time bookkeeping uses this unit.
pub type Nanos = u64;

pub const NANOS_PER_SEC: f64 = 1e9;
pub const NANOS_PER_MILLI: Nanos = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn invalid(msg: impl Into<String>) -> ModelError {
    ModelError::InvalidArgument(msg.into())
}

/// Wraps an angle into the half-open interval (-pi, pi].
pub fn normalize_angle(theta: f64) -> Result<f64, ModelError> {
    if !theta.is_finite() {
        return Err(invalid(format!("angle must be finite, got {theta}")));
    }
    if theta > -PI && theta <= PI {
        return Ok(theta);
    }
    let mut r = theta.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    if r <= -PI {
        r += TAU;
    }
    Ok(r)
}

/// One planned ego state: position, speed, longitudinal acceleration, heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub a: f64,
    pub psi: f64,
}

impl TrajectoryPoint {
    pub fn new(x: f64, y: f64, v: f64, a: f64, psi: f64) -> Self {
        Self { x, y, v, a, psi }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// A planned trajectory sampled on a uniform time grid.
///
/// The first point is the current ego state. Headings are normalized into
/// (-pi, pi] at construction so that downstream differencing is wrap-safe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrajectory")]
pub struct Trajectory {
    id: u64,
    t0: Nanos,
    dt: f64,
    points: Vec<TrajectoryPoint>,
}

#[derive(Deserialize)]
struct RawTrajectory {
    id: u64,
    t0: Nanos,
    dt: f64,
    points: Vec<TrajectoryPoint>,
}

impl TryFrom<RawTrajectory> for Trajectory {
    type Error = ModelError;

    fn try_from(raw: RawTrajectory) -> Result<Self, Self::Error> {
        Trajectory::new(raw.id, raw.t0, raw.dt, raw.points)
    }
}

impl Trajectory {
    pub const MIN_POINTS: usize = 3;

    pub fn new(
        id: u64,
        t0: Nanos,
        dt: f64,
        mut points: Vec<TrajectoryPoint>,
    ) -> Result<Self, ModelError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid(format!("dt must be finite and positive, got {dt}")));
        }
        if points.len() < Self::MIN_POINTS {
            return Err(invalid(format!(
                "trajectory needs at least {} points, got {}",
                Self::MIN_POINTS,
                points.len()
            )));
        }
        for (i, p) in points.iter_mut().enumerate() {
            let finite = [p.x, p.y, p.v, p.a, p.psi].iter().all(|c| c.is_finite());
            if !finite {
                return Err(invalid(format!("point {i} has a non-finite field")));
            }
            if p.v < 0.0 {
                return Err(invalid(format!("point {i} has negative speed {}", p.v)));
            }
            p.psi = normalize_angle(p.psi)?;
        }
        Ok(Self { id, t0, dt, points })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Emission timestamp of the plan.
    pub fn t0(&self) -> Nanos {
        self.t0
    }

    /// Time increment between consecutive points [s].
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }

    /// Number of points (N + 1).
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Planning horizon t_f - t_0 = N * dt [s].
    pub fn horizon(&self) -> f64 {
        (self.points.len() - 1) as f64 * self.dt
    }

    pub fn t_final(&self) -> Nanos {
        self.t0 + (self.horizon() * NANOS_PER_SEC).round() as Nanos
    }
}

/// Predicted (x, y) positions of one traffic participant on the ego time grid.
///
/// Index `i` corresponds to ego point `i`; beyond the last state the object is
/// treated as absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawObject")]
pub struct PredictedObject {
    id: u64,
    states: Vec<[f64; 2]>,
}

#[derive(Deserialize)]
struct RawObject {
    id: u64,
    states: Vec<[f64; 2]>,
}

impl TryFrom<RawObject> for PredictedObject {
    type Error = ModelError;

    fn try_from(raw: RawObject) -> Result<Self, Self::Error> {
        PredictedObject::new(raw.id, raw.states)
    }
}

impl PredictedObject {
    pub fn new(id: u64, states: Vec<[f64; 2]>) -> Result<Self, ModelError> {
        if states.is_empty() {
            return Err(invalid(format!("object {id} has no predicted states")));
        }
        if states.iter().flatten().any(|c| !c.is_finite()) {
            return Err(invalid(format!("object {id} has a non-finite state")));
        }
        Ok(Self { id, states })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn states(&self) -> &[[f64; 2]] {
        &self.states
    }

    pub fn state_at(&self, step: usize) -> Option<[f64; 2]> {
        self.states.get(step).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawObjectSet")]
pub struct ObjectSet {
    timestamp: Nanos,
    objects: Vec<PredictedObject>,
}

#[derive(Deserialize)]
struct RawObjectSet {
    timestamp: Nanos,
    objects: Vec<PredictedObject>,
}

impl TryFrom<RawObjectSet> for ObjectSet {
    type Error = ModelError;

    fn try_from(raw: RawObjectSet) -> Result<Self, Self::Error> {
        ObjectSet::new(raw.timestamp, raw.objects)
    }
}

impl ObjectSet {
    pub fn new(timestamp: Nanos, objects: Vec<PredictedObject>) -> Result<Self, ModelError> {
        let mut seen = HashSet::with_capacity(objects.len());
        for o in &objects {
            if !seen.insert(o.id) {
                return Err(invalid(format!("duplicate object id {}", o.id)));
            }
        }
        Ok(Self { timestamp, objects })
    }

    pub fn timestamp(&self) -> Nanos {
        self.timestamp
    }

    pub fn objects(&self) -> &[PredictedObject] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }
}

/// Physical envelope the vehicle can actually follow.
///
/// The curvature bound is always derived from steering angle and wheelbase,
/// see [`VehicleLimits::kappa_max`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLimits")]
pub struct VehicleLimits {
    a_max: f64,
    v_switch: f64,
    delta_max: f64,
    wheelbase: f64,
    kappa_dot_max: f64,
}

#[derive(Deserialize)]
struct RawLimits {
    a_max: f64,
    v_switch: f64,
    delta_max: f64,
    wheelbase: f64,
    kappa_dot_max: f64,
}

impl TryFrom<RawLimits> for VehicleLimits {
    type Error = ModelError;

    fn try_from(r: RawLimits) -> Result<Self, Self::Error> {
        VehicleLimits::new(
            r.a_max,
            r.v_switch,
            r.delta_max,
            r.wheelbase,
            r.kappa_dot_max,
        )
    }
}

impl Default for VehicleLimits {
    /// Mid-size passenger car.
    fn default() -> Self {
        Self {
            a_max: 11.5,
            v_switch: 7.319,
            delta_max: 0.910,
            wheelbase: 2.578,
            kappa_dot_max: 0.4,
        }
    }
}

impl VehicleLimits {
    pub fn new(
        a_max: f64,
        v_switch: f64,
        delta_max: f64,
        wheelbase: f64,
        kappa_dot_max: f64,
    ) -> Result<Self, ModelError> {
        let fields = [
            ("a_max", a_max),
            ("v_switch", v_switch),
            ("delta_max", delta_max),
            ("wheelbase", wheelbase),
            ("kappa_dot_max", kappa_dot_max),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(invalid(format!(
                    "{name} must be finite and positive, got {value}"
                )));
            }
        }
        if delta_max >= PI / 2.0 {
            return Err(invalid(format!(
                "delta_max must be below pi/2, got {delta_max}"
            )));
        }
        Ok(Self {
            a_max,
            v_switch,
            delta_max,
            wheelbase,
            kappa_dot_max,
        })
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn v_switch(&self) -> f64 {
        self.v_switch
    }

    pub fn delta_max(&self) -> f64 {
        self.delta_max
    }

    pub fn wheelbase(&self) -> f64 {
        self.wheelbase
    }

    pub fn kappa_dot_max(&self) -> f64 {
        self.kappa_dot_max
    }

    /// Maximum curvature tan(delta_max) / L.
    pub fn kappa_max(&self) -> f64 {
        self.delta_max.tan() / self.wheelbase
    }
}

/// Polyline reference path with precomputed cumulative arc lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct ReferencePath {
    vertices: Vec<[f64; 2]>,
    arc_lengths: Vec<f64>,
}

impl TryFrom<Vec<[f64; 2]>> for ReferencePath {
    type Error = ModelError;

    fn try_from(vertices: Vec<[f64; 2]>) -> Result<Self, Self::Error> {
        ReferencePath::new(vertices)
    }
}

impl From<ReferencePath> for Vec<[f64; 2]> {
    fn from(path: ReferencePath) -> Self {
        path.vertices
    }
}

impl ReferencePath {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self, ModelError> {
        if vertices.len() < 2 {
            return Err(invalid(format!(
                "reference path needs at least 2 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(invalid("reference path has a non-finite vertex"));
        }
        let mut arc_lengths = Vec::with_capacity(vertices.len());
        arc_lengths.push(0.0);
        let mut s = 0.0;
        for (k, w) in vertices.windows(2).enumerate() {
            let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            if len <= 0.0 {
                return Err(invalid(format!("vertices {k} and {} coincide", k + 1)));
            }
            let next = s + len;
            if next <= s {
                return Err(invalid(format!(
                    "arc length does not increase at vertex {}",
                    k + 1
                )));
            }
            s = next;
            arc_lengths.push(s);
        }
        Ok(Self {
            vertices,
            arc_lengths,
        })
    }

    /// Straight two-vertex path.
    pub fn straight(from: [f64; 2], to: [f64; 2]) -> Result<Self, ModelError> {
        Self::new(vec![from, to])
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn arc_lengths(&self) -> &[f64] {
        &self.arc_lengths
    }

    pub fn total_length(&self) -> f64 {
        *self.arc_lengths.last().expect("at least two vertices")
    }

    pub fn segment_count(&self) -> usize {
        self.vertices.len() - 1
    }

    /// Cartesian point at arc length `s`, clamped to the path extent.
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let s = s.clamp(0.0, self.total_length());
        let k = match self
            .arc_lengths
            .binary_search_by(|probe| probe.total_cmp(&s))
        {
            Ok(i) => return self.vertices[i],
            Err(i) => i - 1,
        };
        let [ax, ay] = self.vertices[k];
        let [bx, by] = self.vertices[k + 1];
        let t = (s - self.arc_lengths[k]) / (self.arc_lengths[k + 1] - self.arc_lengths[k]);
        [ax + t * (bx - ax), ay + t * (by - ay)]
    }
}

/// Constraint identifiers reported in violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintId {
    AccelUpper,
    AccelLower,
    Curvature,
    CurvatureRate,
    YawRate,
    /// The trajectory could not be evaluated at all.
    Malformed,
}

impl ConstraintId {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::AccelUpper => "accel_upper",
            Self::AccelLower => "accel_lower",
            Self::Curvature => "curvature",
            Self::CurvatureRate => "curvature_rate",
            Self::YawRate => "yaw_rate",
            Self::Malformed => "malformed",
        }
    }
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: ConstraintId,
    pub index: usize,
    pub measured: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    Passed,
    Infeasible,
    Timeout,
}

impl Cause {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Passed => "passed",
            Self::Infeasible => "infeasible",
            Self::Timeout => "timeout",
        }
    }
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Binary safety result for one trajectory or one missed deadline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVerdict")]
pub struct Verdict {
    trajectory_id: Option<u64>,
    value: u8,
    cause: Cause,
    violations: Vec<Violation>,
    total_cost: Option<f64>,
}

#[derive(Deserialize)]
struct RawVerdict {
    trajectory_id: Option<u64>,
    value: u8,
    cause: Cause,
    violations: Vec<Violation>,
    total_cost: Option<f64>,
}

impl TryFrom<RawVerdict> for Verdict {
    type Error = ModelError;

    fn try_from(r: RawVerdict) -> Result<Self, Self::Error> {
        let v = Verdict {
            trajectory_id: r.trajectory_id,
            value: r.value,
            cause: r.cause,
            violations: r.violations,
            total_cost: r.total_cost,
        };
        v.check()?;
        Ok(v)
    }
}

impl Verdict {
    pub fn passed(trajectory_id: u64, total_cost: f64) -> Self {
        Self {
            trajectory_id: Some(trajectory_id),
            value: 1,
            cause: Cause::Passed,
            violations: Vec::new(),
            total_cost: Some(total_cost),
        }
    }

    /// Panics if `violations` is empty; an infeasible verdict needs a reason.
    pub fn infeasible(trajectory_id: u64, violations: Vec<Violation>) -> Self {
        assert!(
            !violations.is_empty(),
            "infeasible verdict without violations"
        );
        Self {
            trajectory_id: Some(trajectory_id),
            value: 0,
            cause: Cause::Infeasible,
            violations,
            total_cost: None,
        }
    }

    pub fn timeout() -> Self {
        Self {
            trajectory_id: None,
            value: 0,
            cause: Cause::Timeout,
            violations: Vec::new(),
            total_cost: None,
        }
    }

    /// Re-checks the verdict invariants.
    pub fn check(&self) -> Result<(), ModelError> {
        let passed = self.cause == Cause::Passed;
        if self.value > 1 {
            return Err(invalid(format!(
                "verdict value must be 0 or 1, got {}",
                self.value
            )));
        }
        if (self.value == 1) != passed {
            return Err(invalid("verdict value 1 must coincide with cause passed"));
        }
        if passed != self.violations.is_empty() && self.cause != Cause::Timeout {
            return Err(invalid("violations must be empty exactly when passed"));
        }
        match self.cause {
            Cause::Timeout => {
                if self.trajectory_id.is_some() || !self.violations.is_empty() {
                    return Err(invalid(
                        "timeout verdict carries no trajectory or violations",
                    ));
                }
                if self.total_cost.is_some() {
                    return Err(invalid("timeout verdict carries no cost"));
                }
            }
            Cause::Infeasible => {
                if self.trajectory_id.is_none() || self.total_cost.is_some() {
                    return Err(invalid("infeasible verdict needs an id and no total cost"));
                }
            }
            Cause::Passed => {
                if self.trajectory_id.is_none() || self.total_cost.is_none() {
                    return Err(invalid("passed verdict needs an id and a total cost"));
                }
            }
        }
        let finite = self
            .violations
            .iter()
            .all(|v| v.measured.is_finite() && v.limit.is_finite())
            && self.total_cost.is_none_or(f64::is_finite);
        if !finite {
            return Err(invalid("verdict numbers must be finite"));
        }
        Ok(())
    }

    pub fn trajectory_id(&self) -> Option<u64> {
        self.trajectory_id
    }

    pub fn value(&self) -> u8 {
        self.value
    }

    pub fn is_pass(&self) -> bool {
        self.value == 1
    }

    pub fn cause(&self) -> Cause {
        self.cause
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn total_cost(&self) -> Option<f64> {
        self.total_cost
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, psi: f64) -> TrajectoryPoint {
        TrajectoryPoint::new(x, 0.0, 1.0, 0.0, psi)
    }

    #[test]
    fn normalize_fixed_points() {
        assert_eq!(normalize_angle(0.0).unwrap(), 0.0);
        assert_eq!(normalize_angle(-PI).unwrap(), PI);
        assert_eq!(normalize_angle(PI).unwrap(), PI);
        let r = normalize_angle(3.0 * PI).unwrap();
        assert!((r - PI).abs() < 1e-12, "3pi -> {r}");
        assert!(r > -PI && r <= PI);
    }

    #[test]
    fn normalize_rejects_non_finite() {
        assert!(normalize_angle(f64::NAN).is_err());
        assert!(normalize_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn trajectory_normalizes_heading() {
        let t = Trajectory::new(
            1,
            0,
            0.1,
            vec![pt(0.0, 0.0), pt(1.0, 2.0 * PI + 0.5), pt(2.0, -PI)],
        )
        .unwrap();
        assert!((t.points()[1].psi - 0.5).abs() < 1e-12);
        assert_eq!(t.points()[2].psi, PI);
        assert!((t.horizon() - 0.2).abs() < 1e-15);
        assert_eq!(t.t_final(), 200_000_000);
    }

    #[test]
    fn trajectory_rejects_bad_input() {
        let pts = vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(2.0, 0.0)];
        assert!(Trajectory::new(1, 0, 0.0, pts.clone()).is_err());
        assert!(Trajectory::new(1, 0, 0.1, pts[..2].to_vec()).is_err());
        let mut neg = pts.clone();
        neg[1].v = -0.1;
        assert!(Trajectory::new(1, 0, 0.1, neg).is_err());
        let mut nan = pts;
        nan[2].a = f64::NAN;
        assert!(Trajectory::new(1, 0, 0.1, nan).is_err());
    }

    #[test]
    fn trajectory_deserialization_validates() {
        let json = r#"{"id":1,"t0":0,"dt":0.1,"points":[{"x":0,"y":0,"v":1,"a":0,"psi":0}]}"#;
        assert!(serde_json::from_str::<Trajectory>(json).is_err());
    }

    #[test]
    fn limits_derive_kappa_max() {
        let l = VehicleLimits::new(3.0, 8.0, 0.5, 2.5, 0.2).unwrap();
        assert!((l.kappa_max() - 0.5f64.tan() / 2.5).abs() < 1e-15);
        assert!(VehicleLimits::new(3.0, 8.0, PI / 2.0, 2.5, 0.2).is_err());
        assert!(VehicleLimits::new(0.0, 8.0, 0.5, 2.5, 0.2).is_err());
    }

    #[test]
    fn object_set_rejects_duplicate_ids() {
        let a = PredictedObject::new(7, vec![[0.0, 0.0]]).unwrap();
        let b = PredictedObject::new(7, vec![[1.0, 0.0]]).unwrap();
        assert!(ObjectSet::new(0, vec![a, b]).is_err());
        assert!(PredictedObject::new(1, vec![]).is_err());
    }

    #[test]
    fn reference_path_arc_lengths() {
        let p = ReferencePath::new(vec![[0.0, 0.0], [3.0, 4.0], [3.0, 10.0]]).unwrap();
        assert_eq!(p.arc_lengths(), &[0.0, 5.0, 11.0]);
        assert_eq!(p.point_at(5.0), [3.0, 4.0]);
        assert_eq!(p.point_at(8.0), [3.0, 7.0]);
        assert_eq!(p.point_at(-1.0), [0.0, 0.0]);
        assert!(ReferencePath::new(vec![[0.0, 0.0], [0.0, 0.0]]).is_err());
        assert!(ReferencePath::new(vec![[0.0, 0.0]]).is_err());
    }

    #[test]
    fn verdict_invariants_hold_for_constructors() {
        Verdict::passed(1, 2.0).check().unwrap();
        Verdict::timeout().check().unwrap();
        let v = Violation {
            constraint: ConstraintId::Curvature,
            index: 2,
            measured: 0.5,
            limit: 0.2,
        };
        Verdict::infeasible(3, vec![v]).check().unwrap();
    }

    #[test]
    fn verdict_deserialization_rejects_inconsistent_value() {
        let bad = r#"{"trajectory_id":1,"value":1,"cause":"infeasible","violations":[],"total_cost":null}"#;
        assert!(serde_json::from_str::<Verdict>(bad).is_err());
        let bad_timeout =
            r#"{"trajectory_id":4,"value":0,"cause":"timeout","violations":[],"total_cost":null}"#;
        assert!(serde_json::from_str::<Verdict>(bad_timeout).is_err());
        let ok = r#"{"trajectory_id":null,"value":0,"cause":"timeout","violations":[],"total_cost":null}"#;
        assert_eq!(
            serde_json::from_str::<Verdict>(ok).unwrap(),
            Verdict::timeout()
        );
    }
}
