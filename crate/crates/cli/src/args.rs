//! Command-line arguments and how they override the config file.

use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::config::{AppConfig, Backend};
use crate::gen::{parse_gap, GenParams, ScenarioKind};

#[derive(Debug, Parser)]
#[command(
    name = "trajguard",
    version,
    about = "Runtime supervision of planned trajectories"
)]
pub struct Cli {
    /// Log verbosity; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate every trajectory of a dataset offline.
    Validate(CommonArgs),
    /// Run the supervisor loop on a replayed dataset or a UDP stream.
    Supervise(CommonArgs),
    /// Send a dataset over UDP on its recorded schedule.
    Publish(CommonArgs),
    /// Time repeated evaluation of one trajectory.
    Bench(BenchArgs),
    /// Generate a synthetic dataset with ground truth.
    Gen(GenArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON-lines replay dataset.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Reference path: JSON array of [x, y] vertices.
    #[arg(long)]
    pub path: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub t_max_ms: Option<f64>,
    #[arg(long)]
    pub cycle_ms: Option<f64>,
    /// Start the reaction timer at run start instead of the first pass.
    #[arg(long)]
    pub arm_at_start: bool,
    /// Emit a timeout on every late tick, not once per gap.
    #[arg(long)]
    pub repeat_timeout: bool,
    #[arg(long)]
    pub enable_obs_cost: bool,
    /// Local UDP address; for `supervise` this selects the UDP backend.
    #[arg(long)]
    pub udp_bind: Option<SocketAddr>,
    /// Remote UDP address for outgoing messages.
    #[arg(long)]
    pub udp_peer: Option<SocketAddr>,
    /// Close the UDP stream after this long without traffic.
    #[arg(long)]
    pub idle_ms: Option<u64>,
    /// Keep a replay open this long after its last message.
    #[arg(long)]
    pub tail_ms: Option<u64>,
    /// Replay against the wall clock instead of simulated time.
    #[arg(long)]
    pub realtime: bool,
}

impl CommonArgs {
    /// Loads the config file (or defaults) and applies the flags.
    pub fn resolve(&self, udp_selects_backend: bool) -> Result<AppConfig> {
        let mut c = match &self.config {
            Some(p) => AppConfig::load(p)?,
            None => AppConfig::default(),
        };
        if let Some(v) = &self.dataset {
            c.paths.dataset = Some(v.clone());
        }
        if let Some(v) = &self.path {
            c.paths.reference_path = Some(v.clone());
        }
        if let Some(v) = &self.out {
            c.paths.out = Some(v.clone());
        }
        if let Some(v) = self.t_max_ms {
            c.supervisor.t_max_ms = v;
        }
        if let Some(v) = self.cycle_ms {
            c.supervisor.cycle_ms = v;
        }
        c.supervisor.arm_at_start |= self.arm_at_start;
        c.supervisor.repeat_timeout |= self.repeat_timeout;
        c.cost.obs_enabled |= self.enable_obs_cost;
        if let Some(v) = self.udp_bind {
            c.transport.udp_bind = Some(v);
            if udp_selects_backend {
                c.transport.backend = Backend::Udp;
            }
        }
        if let Some(v) = self.udp_peer {
            c.transport.udp_peer = Some(v);
        }
        if let Some(v) = self.idle_ms {
            c.transport.idle_ms = v;
        }
        if let Some(v) = self.tail_ms {
            c.transport.tail_ms = v;
        }
        c.transport.realtime |= self.realtime;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    #[arg(long, default_value_t = 10_000)]
    pub per_run: usize,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: ScenarioKind,
    /// Dataset file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Config file supplying vehicle limits and the desired speed.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 30)]
    pub points: usize,
    #[arg(long, default_value_t = 7.0)]
    pub speed: f64,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    /// Arc radius for `--kind arc`.
    #[arg(long, default_value_t = 20.0)]
    pub radius: f64,
    /// Spacing between consecutive trajectories.
    #[arg(long, default_value_t = 50)]
    pub period_ms: u64,
    /// Delay before trajectory INDEX instead of the period, as INDEX:MS.
    #[arg(long = "gap", value_parser = parse_gap)]
    pub gaps: Vec<(usize, u64)>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of predicted objects to include.
    #[arg(long, default_value_t = 0)]
    pub objects: usize,
    /// Also write a straight reference path covering the scene.
    #[arg(long)]
    pub with_path: bool,
}

impl GenArgs {
    pub fn params(&self) -> GenParams {
        GenParams {
            kind: self.kind,
            count: self.count,
            points: self.points,
            speed: self.speed,
            dt: self.dt,
            radius: self.radius,
            period_ms: self.period_ms,
            gaps: self.gaps.clone(),
            seed: self.seed,
            objects: self.objects,
        }
    }

    pub fn config(&self) -> Result<AppConfig> {
        match &self.config {
            Some(p) => AppConfig::load(p),
            None => Ok(AppConfig::default()),
        }
    }
}
