//! Subcommand bodies. Each returns the process exit code on success.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use log::info;
use serde::Serialize;
use trajguard::model::NANOS_PER_MILLI;
use trajguard::supervisor::{
    evaluate, run, verdict_for, EvalError, Evaluation, JsonlVerdictSink, RunSummary,
    TeeVerdictSink, VerdictSink, WireVerdictSink,
};
use trajguard::timing::{benchmark, compute_stats, write_samples_csv, write_stats_csv};
use trajguard::transport::{
    replay, MessageSource, Payload, ReplaySchedule, ReplaySource, UdpSink, UdpSource,
};
use trajguard::{
    Clock, MonotonicClock, Nanos, ObjectSet, SimulatedClock, SupervisorConfig, TimingStats,
    Trajectory, Verdict,
};

use crate::config::{AppConfig, Backend};
use crate::gen::{generate, lane_change_points, GenParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
/// At least one trajectory was rejected or the safeguard fired.
pub const EXIT_FLAGGED: i32 = 2;

pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const COSTS_FILE: &str = "costs.csv";
pub const TRACKS_FILE: &str = "tracks.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const BENCH_STATS_FILE: &str = "bench_stats.csv";
pub const BENCH_SAMPLES_FILE: &str = "bench_samples.csv";

pub fn load_dataset(path: &Path) -> Result<ReplaySchedule> {
    let file = File::open(path).with_context(|| format!("opening dataset {}", path.display()))?;
    ReplaySchedule::read_jsonl(BufReader::new(file))
        .with_context(|| format!("reading dataset {}", path.display()))
}

fn require_dataset(cfg: &AppConfig) -> Result<ReplaySchedule> {
    match &cfg.paths.dataset {
        Some(p) => load_dataset(p),
        None => bail!("no dataset given (use --dataset or paths.dataset)"),
    }
}

fn create_out_dir(cfg: &AppConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Offline evaluation of one dataset trajectory.
pub struct Checked {
    pub offset: Nanos,
    pub trajectory: Trajectory,
    pub outcome: Result<Evaluation, EvalError>,
    pub verdict: Verdict,
}

/// Evaluates every trajectory in stream order with the object context that
/// was current when it arrived. No timing, no stale-id filtering.
pub fn check_schedule(schedule: &ReplaySchedule, config: &SupervisorConfig) -> Vec<Checked> {
    let mut objects: Option<ObjectSet> = None;
    let mut out = Vec::new();
    for entry in schedule.entries() {
        match &entry.message.payload {
            Payload::Objects(o) => objects = Some(o.clone()),
            Payload::Trajectory(t) => {
                let outcome = evaluate(
                    t,
                    objects.as_ref(),
                    &config.limits,
                    &config.cost,
                    &config.path,
                );
                let verdict = verdict_for(t.id(), &outcome);
                out.push(Checked {
                    offset: entry.offset,
                    trajectory: t.clone(),
                    outcome,
                    verdict,
                });
            }
            Payload::Verdict(_) => {}
        }
    }
    out
}

/// Rank by ascending total cost among feasible trajectories, starting at 1.
/// Ties keep dataset order.
pub fn feasible_ranks(checked: &[Checked]) -> Vec<Option<usize>> {
    let mut order: Vec<(usize, f64)> = checked
        .iter()
        .enumerate()
        .filter_map(|(i, c)| match &c.outcome {
            Ok(e) if e.report.feasible => Some((i, e.costs.j_sum)),
            _ => None,
        })
        .collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut ranks = vec![None; checked.len()];
    for (rank, (i, _)) in order.into_iter().enumerate() {
        ranks[i] = Some(rank + 1);
    }
    ranks
}

fn write_costs_csv<W: Write>(w: W, checked: &[Checked]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "trajectory_id",
        "feasible",
        "violations",
        "j_ref",
        "j_vel",
        "j_lat",
        "j_lon",
        "j_obs",
        "j_sum",
        "rank",
    ])?;
    for (c, rank) in checked.iter().zip(feasible_ranks(checked)) {
        let mut row = vec![
            c.trajectory.id().to_string(),
            c.verdict.is_pass().to_string(),
            c.verdict.violations().len().to_string(),
        ];
        match &c.outcome {
            Ok(e) => {
                let b = &e.costs;
                row.extend(
                    [b.j_ref, b.j_vel, b.j_lat, b.j_lon, b.j_obs, b.j_sum].map(|x| x.to_string()),
                );
            }
            Err(_) => row.extend(std::iter::repeat_n(String::new(), 6)),
        }
        row.push(rank.map(|r| r.to_string()).unwrap_or_default());
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}

fn write_tracks_csv<W: Write>(w: W, checked: &[Checked]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "trajectory_id",
        "index",
        "x",
        "y",
        "s",
        "d",
        "feasible",
        "j_sum",
    ])?;
    for c in checked {
        let Ok(e) = &c.outcome else { continue };
        for (i, (p, sd)) in c.trajectory.points().iter().zip(&e.coords).enumerate() {
            csv.write_record([
                c.trajectory.id().to_string(),
                i.to_string(),
                p.x.to_string(),
                p.y.to_string(),
                sd.s.to_string(),
                sd.d.to_string(),
                e.report.feasible.to_string(),
                e.costs.j_sum.to_string(),
            ])?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Offline check: verdicts, per-term costs with ranking, and plot tracks.
pub fn validate(cfg: &AppConfig) -> Result<i32> {
    cfg.validate()?;
    let schedule = require_dataset(cfg)?;
    let sup = cfg.supervisor_config()?;
    let checked = check_schedule(&schedule, &sup);
    let dir = create_out_dir(cfg)?;

    let mut sink = JsonlVerdictSink::new(create(&dir.join(VERDICTS_FILE))?);
    for c in &checked {
        sink.publish(c.offset, &c.verdict)?;
    }
    sink.into_inner().flush()?;
    write_costs_csv(create(&dir.join(COSTS_FILE))?, &checked)?;
    write_tracks_csv(create(&dir.join(TRACKS_FILE))?, &checked)?;

    let rejected = checked.iter().filter(|c| !c.verdict.is_pass()).count();
    println!(
        "validated {} trajectories: {} feasible, {} infeasible",
        checked.len(),
        checked.len() - rejected,
        rejected
    );
    Ok(if rejected == 0 { EXIT_OK } else { EXIT_FLAGGED })
}

#[derive(Debug, Serialize)]
pub struct SupervisionReport {
    pub backend: Backend,
    pub passed: usize,
    pub infeasible: usize,
    pub timeout: usize,
    pub stale_dropped: usize,
    pub transport_errors: usize,
    pub sink_errors: usize,
    pub ignored_messages: usize,
    pub ticks: u64,
    /// Runtime statistics of the trajectory evaluations.
    pub evaluation: Option<TimingStats>,
}

impl SupervisionReport {
    fn new(backend: Backend, s: RunSummary) -> Self {
        let evaluation = compute_stats(&s.eval_runtimes_ns).ok().map(|mut st| {
            st.samples.clear();
            st
        });
        Self {
            backend,
            passed: s.passed,
            infeasible: s.infeasible,
            timeout: s.timeout,
            stale_dropped: s.stale_dropped,
            transport_errors: s.transport_errors,
            sink_errors: s.sink_errors,
            ignored_messages: s.ignored_messages,
            ticks: s.ticks,
            evaluation,
        }
    }

    pub fn all_clear(&self) -> bool {
        self.infeasible == 0 && self.timeout == 0
    }
}

fn run_with<S, C>(
    source: &mut S,
    clock: &C,
    sup: &SupervisorConfig,
    log: &Path,
    peer: Option<(SocketAddr, SocketAddr)>,
) -> Result<RunSummary>
where
    S: MessageSource + ?Sized,
    C: Clock,
{
    let mut file_sink = JsonlVerdictSink::new(create(log)?);
    let summary = match peer {
        Some((bind, peer)) => {
            let wire = WireVerdictSink::new(UdpSink::connect(bind, peer)?);
            let mut tee = TeeVerdictSink(file_sink, wire);
            let summary = run(source, &mut tee, clock, sup)?;
            file_sink = tee.0;
            summary
        }
        None => run(source, &mut file_sink, clock, sup)?,
    };
    file_sink.into_inner().flush()?;
    Ok(summary)
}

/// Supervises an already bound UDP source and writes the usual outputs.
pub fn supervise_udp(cfg: &AppConfig, mut source: UdpSource) -> Result<SupervisionReport> {
    let sup = cfg.supervisor_config()?;
    let dir = create_out_dir(cfg)?;
    info!("listening on {}", source.local_addr());
    let clock = MonotonicClock::new();
    let summary = run_with(&mut source, &clock, &sup, &dir.join(VERDICTS_FILE), None)?;
    finish(&dir, SupervisionReport::new(Backend::Udp, summary))
}

fn finish(dir: &Path, report: SupervisionReport) -> Result<SupervisionReport> {
    let mut out = create(&dir.join(SUMMARY_FILE))?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    Ok(report)
}

/// Runs the supervisor loop against the configured backend.
pub fn supervise_report(cfg: &AppConfig) -> Result<SupervisionReport> {
    cfg.validate()?;
    let sup = cfg.supervisor_config()?;
    let t = &cfg.transport;
    match t.backend {
        Backend::Udp => {
            let bind = t.udp_bind.context("udp backend needs --udp-bind")?;
            let idle = Duration::from_millis(t.idle_ms);
            let source = UdpSource::bind(bind, sup.queue_capacity, Some(idle))?;
            supervise_udp(cfg, source)
        }
        Backend::Replay => {
            let schedule = require_dataset(cfg)?;
            let dir = create_out_dir(cfg)?;
            let log = dir.join(VERDICTS_FILE);
            let tail = t.tail_ms * NANOS_PER_MILLI;
            let bind = t
                .udp_bind
                .unwrap_or_else(|| "127.0.0.1:0".parse().expect("literal"));
            let peer = t.udp_peer.map(|p| (bind, p));
            let summary = if t.realtime {
                let clock = MonotonicClock::new();
                let mut src = ReplaySource::new(schedule, clock.now()).with_tail(tail);
                run_with(&mut src, &clock, &sup, &log, peer)?
            } else {
                let clock = SimulatedClock::new(0);
                let mut src = ReplaySource::new(schedule, 0).with_tail(tail);
                run_with(&mut src, &clock, &sup, &log, peer)?
            };
            finish(&dir, SupervisionReport::new(Backend::Replay, summary))
        }
    }
}

pub fn supervise(cfg: &AppConfig) -> Result<i32> {
    let report = supervise_report(cfg)?;
    println!(
        "passed={} infeasible={} timeout={} stale_dropped={} transport_errors={}",
        report.passed,
        report.infeasible,
        report.timeout,
        report.stale_dropped,
        report.transport_errors
    );
    Ok(if report.all_clear() {
        EXIT_OK
    } else {
        EXIT_FLAGGED
    })
}

/// Planner stand-in: sends the dataset over UDP on its own schedule.
pub fn publish(cfg: &AppConfig) -> Result<i32> {
    cfg.validate()?;
    let schedule = require_dataset(cfg)?;
    let peer = cfg.transport.udp_peer.context("publish needs --udp-peer")?;
    let bind = cfg
        .transport
        .udp_bind
        .unwrap_or_else(|| "127.0.0.1:0".parse().expect("literal"));
    let mut sink = UdpSink::connect(bind, peer)?;
    let clock = MonotonicClock::new();
    let summary = replay(&schedule, &clock, &mut sink)
        .map_err(|(s, e)| anyhow::anyhow!("send failed after {} messages: {e}", s.delivered))?;
    println!("sent {} messages to {peer}", summary.delivered);
    Ok(EXIT_OK)
}

/// Default benchmark workload: a 30-point lane change at 7 m/s.
pub fn default_bench_trajectory() -> Trajectory {
    Trajectory::new(1, 0, 0.1, lane_change_points(30, 7.0, 0.1, 3.5))
        .expect("valid generator output")
}

/// Times repeated evaluation of one trajectory and writes both CSV reports.
pub fn bench(cfg: &AppConfig, runs: usize, per_run: usize) -> Result<i32> {
    let sup = cfg.supervisor_config()?;
    let (traj, objects) = match &cfg.paths.dataset {
        Some(p) => {
            let schedule = load_dataset(p)?;
            let objects = schedule
                .entries()
                .iter()
                .find_map(|e| match &e.message.payload {
                    Payload::Objects(o) => Some(o.clone()),
                    _ => None,
                });
            let traj = schedule
                .trajectories()
                .next()
                .cloned()
                .context("dataset holds no trajectory")?;
            (traj, objects)
        }
        None => (default_bench_trajectory(), None),
    };
    let report = benchmark(
        |_, _| {
            let r = evaluate(
                std::hint::black_box(&traj),
                objects.as_ref(),
                &sup.limits,
                &sup.cost,
                &sup.path,
            );
            std::hint::black_box(r.is_ok());
        },
        runs,
        per_run,
    )?;

    let dir = create_out_dir(cfg)?;
    let mut stats = create(&dir.join(BENCH_STATS_FILE))?;
    write_stats_csv(&mut stats, &report)?;
    stats.flush()?;
    let mut samples = create(&dir.join(BENCH_SAMPLES_FILE))?;
    write_samples_csv(&mut samples, &report)?;
    samples.flush()?;

    println!(
        "{} points, {} x {} evaluations, clock resolution {} ns",
        traj.len(),
        runs,
        per_run,
        report.clock_resolution_ns
    );
    println!(
        "{:>4} {:>10} {:>10} {:>12} {:>12} {:>9}",
        "run", "min_ns", "max_ns", "avg_ns", "jitter_ns", "jitter_%"
    );
    for (i, s) in report.runs.iter().enumerate() {
        let pct = s
            .jitter_pct
            .map_or_else(|| "-".to_string(), |p| format!("{p:.1}"));
        println!(
            "{:>4} {:>10} {:>10} {:>12.1} {:>12.1} {:>9}",
            i, s.t_min, s.t_worst, s.t_avg, s.jitter_abs, pct
        );
    }
    Ok(EXIT_OK)
}

/// Writes the dataset, its `.truth.json` sidecar and, if asked, a
/// `.path.json` reference path next to it.
pub fn gen(cfg: &AppConfig, params: &GenParams, out: &Path, with_path: bool) -> Result<i32> {
    let g = generate(params, &cfg.limits, cfg.cost.v_desired)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = create(out)?;
    g.schedule.write_jsonl(&mut w)?;
    w.flush()?;

    let mut truth = create(&out.with_extension("truth.json"))?;
    serde_json::to_writer_pretty(&mut truth, &g.truth)?;
    writeln!(truth)?;
    truth.flush()?;

    if with_path {
        let mut p = create(&out.with_extension("path.json"))?;
        serde_json::to_writer(&mut p, &g.path)?;
        writeln!(p)?;
        p.flush()?;
    }
    println!("wrote {} messages to {}", g.schedule.len(), out.display());
    Ok(EXIT_OK)
}
