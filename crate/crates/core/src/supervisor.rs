//! Cyclic supervision loop with a time safeguard.
//!
//! Each tick the loop takes whatever the transport delivered, evaluates
//! trajectories (feasibility and cost), and checks that the last *passing*
//! trajectory is no older than the reaction-time bound. [`step`] holds all the
//! decision logic and does no I/O; [`run`] drives it with an injected source,
//! sink and clock.

use std::io::Write;
use std::time::Instant;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::cost::{cost_total, CostBreakdown, CostConfig, CostError, CostInputs};
use crate::feasibility::{check_profile, derive_profile, FeasibilityReport, KinematicProfile};
use crate::model::{
    ConstraintId, Nanos, ObjectSet, ReferencePath, Trajectory, VehicleLimits, Verdict, Violation,
    NANOS_PER_MILLI,
};
use crate::pathref::{project_trajectory, CurvilinearCoord};
use crate::timing::Clock;
use crate::transport::{
    canonical_json, MessageSink, MessageSource, Payload, SourcePoll, TransportError, WireMessage,
    DEFAULT_QUEUE_CAPACITY,
};

pub const DEFAULT_T_MAX: Nanos = 100 * NANOS_PER_MILLI;
pub const DEFAULT_CYCLE: Nanos = 10 * NANOS_PER_MILLI;
pub const VERDICT_LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SupervisorError {
    #[error("invalid supervisor configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisorConfig {
    /// Maximum reaction time between passing trajectories.
    pub t_max_reaction: Nanos,
    pub cycle_period: Nanos,
    pub limits: VehicleLimits,
    pub cost: CostConfig,
    pub path: ReferencePath,
    /// Treat the start of the run as the last passing trajectory.
    pub arm_at_start: bool,
    /// Emit a timeout verdict every tick while the bound is violated instead
    /// of once per gap.
    pub repeat_timeout: bool,
    pub queue_capacity: usize,
}

impl SupervisorConfig {
    pub fn new(limits: VehicleLimits, cost: CostConfig, path: ReferencePath) -> Self {
        Self {
            t_max_reaction: DEFAULT_T_MAX,
            cycle_period: DEFAULT_CYCLE,
            limits,
            cost,
            path,
            arm_at_start: false,
            repeat_timeout: false,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }

    pub fn validate(&self) -> Result<(), SupervisorError> {
        let err = |m: String| Err(SupervisorError::InvalidConfig(m));
        if self.t_max_reaction == 0 {
            return err("t_max_reaction must be positive".into());
        }
        if self.cycle_period == 0 {
            return err("cycle_period must be positive".into());
        }
        if self.cycle_period > self.t_max_reaction {
            return err(format!(
                "cycle_period {} ns exceeds t_max_reaction {} ns",
                self.cycle_period, self.t_max_reaction
            ));
        }
        if self.queue_capacity == 0 {
            return err("queue_capacity must be positive".into());
        }
        self.cost
            .validate()
            .map_err(|e| SupervisorError::InvalidConfig(e.to_string()))
    }
}

/// Full result of evaluating one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub profile: KinematicProfile,
    pub coords: Vec<CurvilinearCoord>,
    pub report: FeasibilityReport,
    pub costs: CostBreakdown,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("trajectory cannot be evaluated at point {index}: {reason}")]
pub struct EvalError {
    pub index: usize,
    pub reason: String,
}

impl From<CostError> for EvalError {
    fn from(e: CostError) -> Self {
        Self {
            index: 0,
            reason: e.to_string(),
        }
    }
}

/// Feasibility plus cost for one trajectory.
///
/// Fails only when intermediate quantities overflow to non-finite values.
pub fn evaluate(
    traj: &Trajectory,
    objects: Option<&ObjectSet>,
    limits: &VehicleLimits,
    cost: &CostConfig,
    path: &ReferencePath,
) -> Result<Evaluation, EvalError> {
    let profile = derive_profile(traj);
    let bad = (0..profile.len()).find(|&i| {
        !(profile.kappa[i].is_finite()
            && profile.kappa_dot[i].is_finite()
            && profile.yaw_rate[i].is_finite()
            && profile.ds[i].is_finite())
    });
    if let Some(index) = bad {
        return Err(EvalError {
            index,
            reason: "non-finite kinematic profile".into(),
        });
    }
    let coords = project_trajectory(traj, path);
    let report = check_profile(traj, &profile, limits);
    let costs = cost_total(
        CostInputs {
            trajectory: traj,
            profile: &profile,
            coords: &coords,
            objects,
        },
        cost,
    )?;
    if !costs.j_sum.is_finite() {
        return Err(EvalError {
            index: 0,
            reason: "non-finite total cost".into(),
        });
    }
    Ok(Evaluation {
        profile,
        coords,
        report,
        costs,
    })
}

/// Verdict for an evaluated trajectory, or a `malformed` rejection.
pub fn verdict_for(traj_id: u64, outcome: &Result<Evaluation, EvalError>) -> Verdict {
    match outcome {
        Ok(eval) if eval.report.feasible => Verdict::passed(traj_id, eval.costs.j_sum),
        Ok(eval) => Verdict::infeasible(traj_id, eval.report.violations.clone()),
        Err(e) => Verdict::infeasible(
            traj_id,
            vec![Violation {
                constraint: ConstraintId::Malformed,
                index: e.index,
                measured: 0.0,
                limit: 0.0,
            }],
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SupervisorState {
    /// Time of the most recent passing trajectory.
    pub t_recv: Option<Nanos>,
    /// Highest trajectory id taken in (passed or not).
    pub last_id: Option<u64>,
    pub timeout_latched: bool,
    pub last_now: Option<Nanos>,
}

impl SupervisorState {
    /// State at the start of a run. With `arm_at_start` the start time counts
    /// as a passing trajectory, so silence from the outset trips the bound.
    pub fn initial(start: Nanos, config: &SupervisorConfig) -> Self {
        Self {
            t_recv: config.arm_at_start.then_some(start),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    StaleDropped { id: u64, last_id: u64 },
    ClockRegressed { now: Nanos, previous: Nanos },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: SupervisorState,
    pub verdicts: Vec<Verdict>,
    pub diagnostics: Vec<Diagnostic>,
    /// Set when a trajectory was evaluated this step.
    pub evaluation: Option<Result<Evaluation, EvalError>>,
}

/// One supervisor decision.
///
/// 1. An incoming trajectory with an id above `last_id` is evaluated and gets
///    a passed/infeasible verdict. Only a pass refreshes `t_recv` and clears
///    the timeout latch. Stale or duplicate ids are dropped without a verdict.
/// 2. Then, if `now - t_recv > t_max_reaction`, a timeout verdict is emitted
///    unless one was already emitted for this gap (or every time when
///    `repeat_timeout` is set).
pub fn step(
    state: &SupervisorState,
    now: Nanos,
    inbox: Option<&Trajectory>,
    objects: Option<&ObjectSet>,
    config: &SupervisorConfig,
) -> StepResult {
    let mut next = *state;
    let mut verdicts = Vec::new();
    let mut diagnostics = Vec::new();
    let mut evaluation = None;

    let mut now = now;
    if let Some(previous) = state.last_now {
        if now < previous {
            diagnostics.push(Diagnostic::ClockRegressed { now, previous });
            now = previous;
        }
    }
    next.last_now = Some(now);

    if let Some(traj) = inbox {
        match state.last_id {
            Some(last_id) if traj.id() <= last_id => {
                diagnostics.push(Diagnostic::StaleDropped {
                    id: traj.id(),
                    last_id,
                });
            }
            _ => {
                next.last_id = Some(traj.id());
                let outcome = evaluate(traj, objects, &config.limits, &config.cost, &config.path);
                let verdict = verdict_for(traj.id(), &outcome);
                if verdict.is_pass() {
                    next.t_recv = Some(now);
                    next.timeout_latched = false;
                }
                verdicts.push(verdict);
                evaluation = Some(outcome);
            }
        }
    }

    if let Some(t_recv) = next.t_recv {
        let overdue = now.saturating_sub(t_recv) > config.t_max_reaction;
        if overdue && (!next.timeout_latched || config.repeat_timeout) {
            verdicts.push(Verdict::timeout());
            next.timeout_latched = true;
        }
    }

    debug_assert!(verdicts.iter().all(|v| v.check().is_ok()));
    StepResult {
        state: next,
        verdicts,
        diagnostics,
        evaluation,
    }
}

/// [`step`] bundled with its configuration and the latest object set.
#[derive(Debug, Clone)]
pub struct Supervisor {
    config: SupervisorConfig,
    state: SupervisorState,
    objects: Option<ObjectSet>,
}

impl Supervisor {
    pub fn new(config: SupervisorConfig, start: Nanos) -> Result<Self, SupervisorError> {
        config.validate()?;
        let state = SupervisorState::initial(start, &config);
        Ok(Self {
            config,
            state,
            objects: None,
        })
    }

    pub fn config(&self) -> &SupervisorConfig {
        &self.config
    }

    pub fn state(&self) -> &SupervisorState {
        &self.state
    }

    pub fn set_objects(&mut self, objects: ObjectSet) {
        self.objects = Some(objects);
    }

    pub fn step(&mut self, now: Nanos, inbox: Option<&Trajectory>) -> StepResult {
        let result = step(&self.state, now, inbox, self.objects.as_ref(), &self.config);
        self.state = result.state;
        result
    }
}

/// Receives verdicts in emission order.
pub trait VerdictSink {
    fn publish(&mut self, at: Nanos, verdict: &Verdict) -> Result<(), TransportError>;
}

impl VerdictSink for Vec<(Nanos, Verdict)> {
    fn publish(&mut self, at: Nanos, verdict: &Verdict) -> Result<(), TransportError> {
        self.push((at, verdict.clone()));
        Ok(())
    }
}

/// One JSON line per verdict:
/// `{"cause","schema_version","t_ns","total_cost","trajectory_id","value","violations"}`
/// with canonical key order and float formatting.
pub fn verdict_log_line(at: Nanos, verdict: &Verdict) -> String {
    let mut value = serde_json::to_value(verdict).expect("verdicts serialize");
    let map = value.as_object_mut().expect("verdict is an object");
    map.insert("schema_version".into(), Value::from(VERDICT_LOG_VERSION));
    map.insert("t_ns".into(), Value::from(at));
    canonical_json(&value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub schema_version: u32,
    pub t_ns: Nanos,
    #[serde(flatten)]
    pub verdict: Verdict,
}

pub fn parse_verdict_log_line(line: &str) -> Result<VerdictRecord, TransportError> {
    let record: VerdictRecord =
        serde_json::from_str(line).map_err(|e| TransportError::Decode(e.to_string()))?;
    if record.schema_version != VERDICT_LOG_VERSION {
        return Err(TransportError::Version {
            expected: VERDICT_LOG_VERSION,
            found: Some(record.schema_version as u64),
        });
    }
    Ok(record)
}

/// Writes the JSON-lines verdict log.
pub struct JsonlVerdictSink<W: Write> {
    out: W,
}

impl<W: Write> JsonlVerdictSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> VerdictSink for JsonlVerdictSink<W> {
    fn publish(&mut self, at: Nanos, verdict: &Verdict) -> Result<(), TransportError> {
        writeln!(self.out, "{}", verdict_log_line(at, verdict))?;
        Ok(())
    }
}

/// Publishes verdicts as `verdict` wire messages on any message sink.
pub struct WireVerdictSink<S: MessageSink> {
    inner: S,
}

impl<S: MessageSink> WireVerdictSink<S> {
    pub fn new(inner: S) -> Self {
        Self { inner }
    }
}

impl<S: MessageSink> VerdictSink for WireVerdictSink<S> {
    fn publish(&mut self, at: Nanos, verdict: &Verdict) -> Result<(), TransportError> {
        self.inner
            .send(&WireMessage::new(Payload::Verdict(verdict.clone()), at))
    }
}

/// Fans out to two sinks.
pub struct TeeVerdictSink<A, B>(pub A, pub B);

impl<A: VerdictSink, B: VerdictSink> VerdictSink for TeeVerdictSink<A, B> {
    fn publish(&mut self, at: Nanos, verdict: &Verdict) -> Result<(), TransportError> {
        let first = self.0.publish(at, verdict);
        let second = self.1.publish(at, verdict);
        first.and(second)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunSummary {
    pub passed: usize,
    pub infeasible: usize,
    pub timeout: usize,
    pub stale_dropped: usize,
    pub transport_errors: usize,
    pub sink_errors: usize,
    /// Messages of kinds the supervisor does not consume.
    pub ignored_messages: usize,
    pub ticks: u64,
    /// Wall-clock runtime of each trajectory evaluation.
    pub eval_runtimes_ns: Vec<Nanos>,
}

impl RunSummary {
    pub fn all_clear(&self) -> bool {
        self.infeasible == 0 && self.timeout == 0
    }
}

/// Drives [`Supervisor`] on a fixed tick grid until the source closes.
///
/// Every tick drains the source: object sets replace the current context,
/// each trajectory gets its own step. A tick without trajectories still steps
/// once so the time safeguard is checked. Source errors are logged and
/// otherwise treated as silence. After the source reports closed, the tick's
/// final timeout check has already run and the loop returns.
pub fn run<S, K, C>(
    source: &mut S,
    sink: &mut K,
    clock: &C,
    config: &SupervisorConfig,
) -> Result<RunSummary, SupervisorError>
where
    S: MessageSource + ?Sized,
    K: VerdictSink + ?Sized,
    C: Clock + ?Sized,
{
    let start = clock.now();
    let mut sup = Supervisor::new(config.clone(), start)?;
    let mut summary = RunSummary::default();
    let cycle = config.cycle_period;
    let mut tick = start;

    loop {
        let now = clock.now();
        summary.ticks += 1;
        let mut stepped = false;
        let mut closed = false;

        loop {
            match source.poll(now) {
                SourcePoll::Message(msg) => match msg.payload {
                    Payload::Trajectory(traj) => {
                        let began = Instant::now();
                        let result = sup.step(now, Some(&traj));
                        if result.evaluation.is_some() {
                            summary
                                .eval_runtimes_ns
                                .push(began.elapsed().as_nanos() as Nanos);
                        }
                        emit(&result, now, sink, &mut summary);
                        stepped = true;
                    }
                    Payload::Objects(objects) => sup.set_objects(objects),
                    Payload::Verdict(_) => summary.ignored_messages += 1,
                },
                SourcePoll::Empty => break,
                SourcePoll::Closed => {
                    closed = true;
                    break;
                }
                SourcePoll::Error(e) => {
                    warn!("transport error treated as silence: {e}");
                    summary.transport_errors += 1;
                }
            }
        }

        if !stepped {
            let result = sup.step(now, None);
            emit(&result, now, sink, &mut summary);
        }
        if closed {
            break;
        }

        tick += cycle;
        let now = clock.now();
        if now > tick {
            // fell behind; realign to the next grid point
            tick += (now - tick).div_ceil(cycle) * cycle;
        }
        clock.sleep_until(tick);
    }
    Ok(summary)
}

fn emit<K: VerdictSink + ?Sized>(
    result: &StepResult,
    now: Nanos,
    sink: &mut K,
    summary: &mut RunSummary,
) {
    for d in &result.diagnostics {
        match d {
            Diagnostic::StaleDropped { id, last_id } => {
                debug!("dropped stale trajectory {id} (last accepted {last_id})");
                summary.stale_dropped += 1;
            }
            Diagnostic::ClockRegressed { now, previous } => {
                warn!("clock went backwards: {now} < {previous}");
            }
        }
    }
    for v in &result.verdicts {
        match v.cause() {
            crate::model::Cause::Passed => summary.passed += 1,
            crate::model::Cause::Infeasible => summary.infeasible += 1,
            crate::model::Cause::Timeout => summary.timeout += 1,
        }
        if let Err(e) = sink.publish(now, v) {
            warn!("verdict sink failed: {e}");
            summary.sink_errors += 1;
        }
    }
}
