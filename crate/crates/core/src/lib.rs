//! Runtime safeguarding for motion-planner output.
//!
//! A trajectory is checked against a kinematic envelope ([`feasibility`]),
//! scored with plausibility costs ([`cost`], [`pathref`]), and the arrival of
//! passing trajectories is watched by a time safeguard ([`supervisor`]).
//! [`transport`] moves messages between planner and supervisor and
//! [`timing`] measures how long all of this takes.

pub mod cost;
pub mod feasibility;
pub mod model;
pub mod pathref;
pub mod supervisor;
pub mod timing;
pub mod transport;

pub use cost::{CostBreakdown, CostConfig};
pub use feasibility::{FeasibilityReport, KinematicProfile};
pub use model::{
    Cause, ConstraintId, Nanos, ObjectSet, PredictedObject, ReferencePath, Trajectory,
    TrajectoryPoint, VehicleLimits, Verdict, Violation,
};
pub use pathref::CurvilinearCoord;
pub use supervisor::{Supervisor, SupervisorConfig, SupervisorState};
pub use timing::{Clock, MonotonicClock, SimulatedClock, TimingStats};
pub use transport::{ReplaySchedule, WireMessage};
