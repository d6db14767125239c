//! Building a [`ScenarioSpec`] from flags and optional configuration files.

use crate::config::{load_config, ConfigError};
use crate::pool::{load_pool, PoolFileError};
use paas_core::netsim::{LatencyProfile, NetError};
use paas_core::provisioning::{Algorithm, DEFAULT_QUEUE_PER_WORKER};
use paas_core::sim::{DeploymentMode, ScenarioSpec};
use std::path::PathBuf;

pub const DEFAULT_WORKERS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgorithmKind {
    FixedQueue,
    Deadline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOptions {
    pub mode: DeploymentMode,
    pub workers: Option<u32>,
    pub seed: u64,
    pub lan_ms: u64,
    pub wan_ms: u64,
    pub algorithm: Option<AlgorithmKind>,
    pub queue_per_worker: u64,
    /// Virtual time (ms since start) by which the deadline policy aims to finish.
    pub deadline_ms: u64,
    pub capacity: Option<u32>,
    pub config: Option<PathBuf>,
    pub pool: Option<PathBuf>,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            mode: DeploymentMode::WorkerDeployment,
            workers: None,
            seed: 42,
            lan_ms: 1,
            wan_ms: 100,
            algorithm: None,
            queue_per_worker: DEFAULT_QUEUE_PER_WORKER,
            deadline_ms: 600_000,
            capacity: None,
            config: None,
            pool: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pool(#[from] PoolFileError),
    #[error(transparent)]
    Latency(#[from] NetError),
}

impl ScenarioOptions {
    pub fn latency(&self) -> Result<LatencyProfile, NetError> {
        LatencyProfile::new(self.lan_ms, self.wan_ms)
    }

    /// Pool file first, then the service configuration, then flags.
    pub fn build(&self) -> Result<ScenarioSpec, ScenarioError> {
        let mut spec = ScenarioSpec::new(self.mode, self.workers.unwrap_or(DEFAULT_WORKERS), self.seed);
        spec.latency = self.latency()?;
        if let Some(path) = &self.pool {
            spec.pool = load_pool(path)?;
        }
        if let Some(path) = &self.config {
            let cfg = load_config(path)?;
            cfg.validate_for(self.mode)?;
            cfg.apply(&mut spec)?;
        }
        if let Some(w) = self.workers {
            spec.workers = w;
        }
        if let Some(c) = self.capacity {
            spec.pool.capacity = c;
        } else if self.pool.is_none() {
            spec.pool.capacity = spec.pool.capacity.max(spec.workers);
        }
        spec.autoscale = self.algorithm.map(|a| match a {
            AlgorithmKind::FixedQueue => Algorithm::FixedQueue { queue_per_worker: self.queue_per_worker },
            AlgorithmKind::Deadline => Algorithm::DeadlinePriority { deadline: self.deadline_ms },
        });
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_defaults() {
        let o = ScenarioOptions { workers: Some(3), capacity: Some(7), lan_ms: 2, wan_ms: 40, ..Default::default() };
        let s = o.build().unwrap();
        assert_eq!((s.workers, s.pool.capacity), (3, 7));
        assert_eq!((s.latency.lan_ms(), s.latency.wan_ms()), (2, 40));
        assert!(s.autoscale.is_none());
    }

    #[test]
    fn lan_above_wan_is_rejected() {
        let o = ScenarioOptions { lan_ms: 50, wan_ms: 10, ..Default::default() };
        assert!(matches!(o.build(), Err(ScenarioError::Latency(_))));
    }

    #[test]
    fn algorithm_parameters_pass_through() {
        let o = ScenarioOptions { algorithm: Some(AlgorithmKind::Deadline), deadline_ms: 9, ..Default::default() };
        assert_eq!(o.build().unwrap().autoscale, Some(Algorithm::DeadlinePriority { deadline: 9 }));
    }
}
