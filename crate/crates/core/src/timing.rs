//! Time sources and runtime statistics.
//!
//! [`MonotonicClock`] backs live runs and benchmarks; [`SimulatedClock`] only
//! moves when told to, which makes supervisor runs reproducible.

use std::io::{self, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::model::Nanos;

pub trait Clock: Send + Sync {
    fn now(&self) -> Nanos;

    /// Blocks (or, for simulated time, jumps) until `now() >= deadline`.
    fn sleep_until(&self, deadline: Nanos);
}

impl<C: Clock + ?Sized> Clock for &C {
    fn now(&self) -> Nanos {
        (**self).now()
    }

    fn sleep_until(&self, deadline: Nanos) {
        (**self).sleep_until(deadline)
    }
}

impl<C: Clock + ?Sized> Clock for Arc<C> {
    fn now(&self) -> Nanos {
        (**self).now()
    }

    fn sleep_until(&self, deadline: Nanos) {
        (**self).sleep_until(deadline)
    }
}

/// Nanoseconds elapsed since the clock was created.
#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> Nanos {
        self.origin.elapsed().as_nanos() as Nanos
    }

    fn sleep_until(&self, deadline: Nanos) {
        let now = self.now();
        if deadline > now {
            std::thread::sleep(Duration::from_nanos(deadline - now));
        }
    }
}

pub fn monotonic() -> MonotonicClock {
    MonotonicClock::new()
}

#[derive(Debug, Default)]
pub struct SimulatedClock {
    now: AtomicU64,
}

impl SimulatedClock {
    pub fn new(start: Nanos) -> Self {
        Self {
            now: AtomicU64::new(start),
        }
    }

    pub fn advance(&self, delta: Nanos) {
        self.now.fetch_add(delta, Ordering::SeqCst);
    }
}

impl Clock for SimulatedClock {
    fn now(&self) -> Nanos {
        self.now.load(Ordering::SeqCst)
    }

    fn sleep_until(&self, deadline: Nanos) {
        self.now.fetch_max(deadline, Ordering::SeqCst);
    }
}

pub fn simulated(start: Nanos) -> SimulatedClock {
    SimulatedClock::new(start)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimingError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Average, worst case, best case and jitter of a set of runtimes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingStats {
    pub samples: Vec<Nanos>,
    pub t_avg: f64,
    pub t_worst: Nanos,
    pub t_min: Nanos,
    /// Largest absolute deviation from the mean.
    pub jitter_abs: f64,
    /// `jitter_abs` relative to `t_avg`, in percent; `None` when `t_avg == 0`.
    pub jitter_pct: Option<f64>,
}

pub fn compute_stats(samples: &[Nanos]) -> Result<TimingStats, TimingError> {
    if samples.is_empty() {
        return Err(TimingError::InvalidArgument(
            "timing statistics need at least one sample".into(),
        ));
    }
    // integer sum keeps the mean independent of sample order
    let sum: u128 = samples.iter().map(|&t| t as u128).sum();
    let t_avg = sum as f64 / samples.len() as f64;
    let t_worst = *samples.iter().max().expect("non-empty");
    let t_min = *samples.iter().min().expect("non-empty");
    let jitter_abs = samples
        .iter()
        .map(|&t| (t as f64 - t_avg).abs())
        .fold(0.0, f64::max);
    let jitter_pct = (t_avg > 0.0).then(|| 100.0 * jitter_abs / t_avg);
    Ok(TimingStats {
        samples: samples.to_vec(),
        t_avg,
        t_worst,
        t_min,
        jitter_abs,
        jitter_pct,
    })
}

/// Smallest non-zero step observed between consecutive monotonic reads.
pub fn clock_resolution() -> Nanos {
    let mut best = Nanos::MAX;
    for _ in 0..64 {
        let start = Instant::now();
        let mut now = Instant::now();
        while now == start {
            now = Instant::now();
        }
        best = best.min((now - start).as_nanos() as Nanos);
    }
    best.max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub runs: Vec<TimingStats>,
    pub clock_resolution_ns: Nanos,
}

/// Times `runs * per_run` invocations of `workload` on the calling thread.
///
/// The workload receives `(run, iteration)` and is timed individually with
/// the monotonic clock.
pub fn benchmark<F>(
    mut workload: F,
    runs: usize,
    per_run: usize,
) -> Result<BenchReport, TimingError>
where
    F: FnMut(usize, usize),
{
    if runs == 0 || per_run == 0 {
        return Err(TimingError::InvalidArgument(
            "runs and per_run must both be at least 1".into(),
        ));
    }
    let clock_resolution_ns = clock_resolution();
    let mut out = Vec::with_capacity(runs);
    for run in 0..runs {
        let mut samples = Vec::with_capacity(per_run);
        for i in 0..per_run {
            let start = Instant::now();
            workload(run, i);
            samples.push(start.elapsed().as_nanos() as Nanos);
        }
        out.push(compute_stats(&samples)?);
    }
    Ok(BenchReport {
        runs: out,
        clock_resolution_ns,
    })
}

pub const STATS_COLUMNS: [&str; 6] = ["run", "min", "max", "avg", "jitter_abs", "jitter_pct"];
pub const SAMPLE_COLUMNS: [&str; 3] = ["run", "index", "runtime_ns"];

fn header_comment<W: Write>(w: &mut W, report: &BenchReport) -> io::Result<()> {
    writeln!(
        w,
        "# clock=monotonic resolution_ns={} unit=ns",
        report.clock_resolution_ns
    )
}

/// One row per run: `run,min,max,avg,jitter_abs,jitter_pct`, preceded by a
/// `#` comment line naming the clock resolution. `jitter_pct` is empty when
/// undefined.
pub fn write_stats_csv<W: Write>(mut w: W, report: &BenchReport) -> io::Result<()> {
    header_comment(&mut w, report)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(STATS_COLUMNS)?;
    for (run, s) in report.runs.iter().enumerate() {
        csv.write_record([
            run.to_string(),
            s.t_min.to_string(),
            s.t_worst.to_string(),
            s.t_avg.to_string(),
            s.jitter_abs.to_string(),
            s.jitter_pct.map(|p| p.to_string()).unwrap_or_default(),
        ])?;
    }
    csv.flush()
}

/// Every raw sample, for box plots.
pub fn write_samples_csv<W: Write>(mut w: W, report: &BenchReport) -> io::Result<()> {
    header_comment(&mut w, report)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(SAMPLE_COLUMNS)?;
    for (run, s) in report.runs.iter().enumerate() {
        for (i, t) in s.samples.iter().enumerate() {
            csv.write_record([run.to_string(), i.to_string(), t.to_string()])?;
        }
    }
    csv.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples() {
        let s = compute_stats(&[5, 5, 5]).unwrap();
        assert_eq!(
            (s.t_avg, s.t_worst, s.t_min, s.jitter_abs),
            (5.0, 5, 5, 0.0)
        );
        assert_eq!(s.jitter_pct, Some(0.0));
    }

    #[test]
    fn one_two_three() {
        let s = compute_stats(&[1, 2, 3]).unwrap();
        assert_eq!(s.t_avg, 2.0);
        assert_eq!(s.t_worst, 3);
        assert_eq!(s.t_min, 1);
        assert_eq!(s.jitter_abs, 1.0);
        assert_eq!(s.jitter_pct, Some(50.0));
    }

    #[test]
    fn zero_mean_has_no_percentage() {
        let s = compute_stats(&[0, 0]).unwrap();
        assert_eq!(s.jitter_pct, None);
    }

    #[test]
    fn empty_samples_rejected() {
        assert!(compute_stats(&[]).is_err());
    }

    #[test]
    fn simulated_clock_moves_only_on_request() {
        let c = simulated(100);
        assert_eq!(c.now(), 100);
        c.advance(5);
        assert_eq!(c.now(), 105);
        c.sleep_until(50);
        assert_eq!(c.now(), 105);
        c.sleep_until(200);
        assert_eq!(c.now(), 200);
    }

    #[test]
    fn monotonic_reads_do_not_decrease() {
        let c = monotonic();
        let mut prev = c.now();
        for _ in 0..1000 {
            let next = c.now();
            assert!(next >= prev);
            prev = next;
        }
        assert!(clock_resolution() >= 1);
    }

    #[test]
    fn benchmark_shape() {
        let report = benchmark(|_, _| {}, 3, 10).unwrap();
        assert_eq!(report.runs.len(), 3);
        assert!(report.runs.iter().all(|s| s.samples.len() == 10));
        assert!(benchmark(|_, _| {}, 0, 10).is_err());
    }

    #[test]
    fn csv_layout() {
        let report = BenchReport {
            runs: vec![compute_stats(&[1, 2, 3]).unwrap()],
            clock_resolution_ns: 20,
        };
        let mut buf = Vec::new();
        write_stats_csv(&mut buf, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "# clock=monotonic resolution_ns=20 unit=ns\nrun,min,max,avg,jitter_abs,jitter_pct\n0,1,3,2,1,50\n"
        );
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(text.lines().nth(1), Some("run,index,runtime_ns"));
    }
}
