//! Application configuration: one JSON file, every field optional, command-line
//! flags applied on top.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use trajguard::{CostConfig, Nanos, ReferencePath, SupervisorConfig, VehicleLimits};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisorSection {
    pub t_max_ms: f64,
    pub cycle_ms: f64,
    pub arm_at_start: bool,
    pub repeat_timeout: bool,
    pub queue_capacity: usize,
}

impl Default for SupervisorSection {
    fn default() -> Self {
        Self {
            t_max_ms: 100.0,
            cycle_ms: 10.0,
            arm_at_start: false,
            repeat_timeout: false,
            queue_capacity: trajguard::transport::DEFAULT_QUEUE_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Replay,
    Udp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportSection {
    pub backend: Backend,
    pub udp_bind: Option<SocketAddr>,
    pub udp_peer: Option<SocketAddr>,
    /// UDP intake closes after this long without a datagram.
    pub idle_ms: u64,
    /// Replay keeps the stream open this long after the last message.
    pub tail_ms: u64,
    /// Replay against the wall clock instead of simulated time.
    pub realtime: bool,
}

impl Default for TransportSection {
    fn default() -> Self {
        Self {
            backend: Backend::Replay,
            udp_bind: None,
            udp_peer: None,
            idle_ms: 2000,
            tail_ms: 0,
            realtime: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub dataset: Option<PathBuf>,
    pub reference_path: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub supervisor: SupervisorSection,
    pub limits: VehicleLimits,
    pub cost: CostConfig,
    pub transport: TransportSection,
    pub paths: PathsSection,
}

fn ms_to_ns(ms: f64, name: &str) -> Result<Nanos> {
    if !(ms.is_finite() && ms > 0.0) {
        bail!("{name} must be a positive number of milliseconds, got {ms}");
    }
    Ok((ms * 1e6).round() as Nanos)
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: AppConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    /// Checks numeric invariants and that referenced input files exist.
    pub fn validate(&self) -> Result<()> {
        for p in [&self.paths.dataset, &self.paths.reference_path]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                bail!("referenced file {} does not exist", p.display());
            }
        }
        self.supervisor_config()?;
        if self.transport.backend == Backend::Udp && self.transport.udp_bind.is_none() {
            bail!("udp backend needs a bind address");
        }
        Ok(())
    }

    /// The configured reference path, or a 10 km straight line along +x.
    pub fn reference_path(&self) -> Result<ReferencePath> {
        match &self.paths.reference_path {
            Some(p) => load_reference_path(p),
            None => Ok(ReferencePath::straight([0.0, 0.0], [10_000.0, 0.0])?),
        }
    }

    pub fn supervisor_config(&self) -> Result<SupervisorConfig> {
        let s = &self.supervisor;
        let mut cfg = SupervisorConfig::new(self.limits, self.cost, self.reference_path()?);
        cfg.t_max_reaction = ms_to_ns(s.t_max_ms, "t_max_ms")?;
        cfg.cycle_period = ms_to_ns(s.cycle_ms, "cycle_ms")?;
        cfg.arm_at_start = s.arm_at_start;
        cfg.repeat_timeout = s.repeat_timeout;
        cfg.queue_capacity = s.queue_capacity;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

/// Reads a JSON array of `[x, y]` pairs.
pub fn load_reference_path(path: &Path) -> Result<ReferencePath> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading reference path {}", path.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing reference path {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c: AppConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, AppConfig::default());
        let s = c.supervisor_config().unwrap();
        assert_eq!(s.t_max_reaction, 100_000_000);
        assert_eq!(s.cycle_period, 10_000_000);
        assert!(!s.cost.obs_enabled);
        assert_eq!(s.cost.p, 2);
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let c: AppConfig = serde_json::from_str(
            r#"{"supervisor": {"t_max_ms": 50}, "cost": {"w_ref": 2.5},
                "limits": {"a_max": 3, "v_switch": 8, "delta_max": 0.5, "wheelbase": 2.5, "kappa_dot_max": 0.4}}"#,
        )
        .unwrap();
        assert_eq!(c.supervisor.t_max_ms, 50.0);
        assert_eq!(c.supervisor.cycle_ms, 10.0);
        assert_eq!(c.cost.w_ref, 2.5);
        assert_eq!(c.cost.w_vel, 1.0);
        assert_eq!(c.limits.a_max(), 3.0);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let bad_limits = r#"{"limits": {"a_max": -1, "v_switch": 8, "delta_max": 0.5, "wheelbase": 2.5, "kappa_dot_max": 0.4}}"#;
        assert!(serde_json::from_str::<AppConfig>(bad_limits).is_err());
        assert!(serde_json::from_str::<AppConfig>(r#"{"bogus": 1}"#).is_err());

        let mut c = AppConfig::default();
        c.supervisor.cycle_ms = 500.0;
        assert!(c.validate().is_err());

        let mut c = AppConfig::default();
        c.paths.dataset = Some(PathBuf::from("/definitely/not/here.jsonl"));
        assert!(c.validate().is_err());
    }
}
