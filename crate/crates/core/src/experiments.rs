//! Benchmark scenarios: Mandelbrot elapsed time per deployment mode, task
//! throughput against worker count, work distribution, and routing probes.
//!
//! Each runner returns typed rows; [`run`] flattens them into a [`Table`] for
//! the CLI.

use crate::clock::Millis;
use crate::models::{mandelbrot_app, MandelbrotImage, TaskSpec};
use crate::netsim::LatencyProfile;
use crate::sim::{Cloud, DeploymentMode, ScenarioSpec, SimError};
use crate::work::{ResultData, UnitId};
use crate::worker::workload::{spin_params, SPIN};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const MANDELBROT_COUNTS: [u32; 3] = [1, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Experiment {
    /// Mandelbrot elapsed time, worker deployment.
    Fig21,
    /// Mandelbrot elapsed time, cloud deployment.
    Fig22,
    /// Throughput against worker count.
    Fig23,
    /// Per-worker unit counts.
    Fig24,
    /// Random probes through the proxy and around it.
    Routing,
}

impl Experiment {
    pub const ALL: [Experiment; 5] =
        [Experiment::Fig21, Experiment::Fig22, Experiment::Fig23, Experiment::Fig24, Experiment::Routing];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Fig21 => "fig21",
            Experiment::Fig22 => "fig22",
            Experiment::Fig23 => "fig23",
            Experiment::Fig24 => "fig24",
            Experiment::Routing => "routing",
        }
    }

    pub fn from_name(s: &str) -> Result<Self, ExperimentError> {
        Self::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| ExperimentError::Unknown(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExperimentError {
    #[error("unknown experiment {0:?}")]
    Unknown(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("thread {0} did not return a result")]
    MissingResult(UnitId),
    #[error("tile results do not assemble into an image")]
    Assembly,
}

/// How Mandelbrot tiles are costed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileWorkload {
    /// Real escape-time tiles.
    Mandelbrot,
    /// Spin units with the given cost standing in for tiles.
    Uniform { cost: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub latency: LatencyProfile,
    pub width: u32,
    pub height: u32,
    pub tiles: u32,
    pub max_iter: u32,
    pub tile_workload: TileWorkload,
    pub mandelbrot_counts: Vec<u32>,
    pub throughput_counts: Vec<u32>,
    pub units: u32,
    pub unit_cost: u64,
    pub distribution_workers: u32,
    pub distribution_units: u32,
    pub probes: u32,
    pub probe_workers: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            latency: LatencyProfile::default(),
            width: 400,
            height: 200,
            tiles: 100,
            max_iter: 256,
            tile_workload: TileWorkload::Mandelbrot,
            mandelbrot_counts: MANDELBROT_COUNTS.to_vec(),
            throughput_counts: (1..=16).collect(),
            units: 1600,
            unit_cost: 1600,
            distribution_workers: 10,
            distribution_units: 100,
            probes: 1000,
            probe_workers: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElapsedRow {
    pub mode: DeploymentMode,
    pub workers: u32,
    pub tiles: u32,
    pub elapsed_ms: Millis,
    /// SHA-256 of the assembled histogram, hex; empty for uniform tiles.
    pub histogram_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputRow {
    pub workers: u32,
    pub units: u32,
    pub elapsed_ms: Millis,
    /// Units per virtual second.
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistributionRow {
    pub worker: String,
    pub executed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingRow {
    pub path: &'static str,
    pub sent: u64,
    pub delivered: u64,
    pub misdelivered: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

/// Result of one Mandelbrot run.
#[derive(Debug, Clone, PartialEq)]
pub struct MandelbrotRun {
    pub row: ElapsedRow,
    pub image: Option<MandelbrotImage>,
    pub trace_digest: [u8; 32],
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn deployed(spec: ScenarioSpec) -> Result<Cloud, SimError> {
    let mut c = Cloud::new(spec)?;
    c.deploy()?;
    Ok(c)
}

/// Deploys `workers`, starts one thread per tile and waits for all of them.
pub fn mandelbrot_run(mode: DeploymentMode, workers: u32, cfg: &ExperimentConfig) -> Result<MandelbrotRun, ExperimentError> {
    let job = mandelbrot_app(cfg.width, cfg.height, cfg.tiles, cfg.max_iter).map_err(SimError::from)?;
    let mut c = deployed(ScenarioSpec::new(mode, workers, cfg.seed).with_latency(cfg.latency))?;
    let t0 = c.now();
    let ids = match cfg.tile_workload {
        TileWorkload::Mandelbrot => c.start_mandelbrot(&job)?,
        TileWorkload::Uniform { cost } => {
            let ids: Vec<_> = (0..cfg.tiles).map(|_| c.create_thread(SPIN, spin_params(cost), cost)).collect();
            c.start_threads(&ids)?;
            ids
        }
    };
    let end = c.run_until_client_idle()?;
    let (image, histogram_sha256) = match cfg.tile_workload {
        TileWorkload::Mandelbrot => {
            let results = ids
                .iter()
                .map(|id| c.client().thread(*id).and_then(|t| t.result().cloned()).ok_or(ExperimentError::MissingResult(*id)))
                .collect::<Result<Vec<ResultData>, _>>()?;
            let image = job.assemble(&results).ok_or(ExperimentError::Assembly)?;
            let mut h = Sha256::new();
            for n in &image.histogram {
                h.update(n.to_le_bytes());
            }
            let digest: [u8; 32] = h.finalize().into();
            (Some(image), hex(&digest))
        }
        TileWorkload::Uniform { .. } => (None, String::new()),
    };
    Ok(MandelbrotRun {
        row: ElapsedRow { mode, workers, tiles: cfg.tiles, elapsed_ms: end - t0, histogram_sha256 },
        image,
        trace_digest: c.trace().digest(),
    })
}

pub fn mandelbrot_series(mode: DeploymentMode, cfg: &ExperimentConfig) -> Result<Vec<ElapsedRow>, ExperimentError> {
    cfg.mandelbrot_counts.iter().map(|&w| mandelbrot_run(mode, w, cfg).map(|r| r.row)).collect()
}

/// Runs `units` equal spin tasks on `workers` in a cloud deployment.
pub fn throughput_run(workers: u32, cfg: &ExperimentConfig) -> Result<ThroughputRow, ExperimentError> {
    let mut c = deployed(ScenarioSpec::new(DeploymentMode::CloudDeployment, workers, cfg.seed).with_latency(cfg.latency))?;
    let mut app = c.new_task_app();
    for _ in 0..cfg.units {
        app.add_task(TaskSpec::new(SPIN, spin_params(cfg.unit_cost), cfg.unit_cost)).map_err(SimError::from)?;
    }
    let t0 = c.now();
    c.submit_tasks(app)?;
    let elapsed = c.run_until_client_idle()? - t0;
    let throughput = if elapsed == 0 { 0.0 } else { cfg.units as f64 * 1000.0 / elapsed as f64 };
    Ok(ThroughputRow { workers, units: cfg.units, elapsed_ms: elapsed, throughput })
}

pub fn throughput_series(cfg: &ExperimentConfig) -> Result<Vec<ThroughputRow>, ExperimentError> {
    cfg.throughput_counts.iter().map(|&w| throughput_run(w, cfg)).collect()
}

/// Executed-unit count per worker after `distribution_units` equal tasks.
pub fn distribution(mode: DeploymentMode, cfg: &ExperimentConfig) -> Result<Vec<DistributionRow>, ExperimentError> {
    let mut c = deployed(ScenarioSpec::new(mode, cfg.distribution_workers, cfg.seed).with_latency(cfg.latency))?;
    let mut app = c.new_task_app();
    for _ in 0..cfg.distribution_units {
        app.add_task(TaskSpec::new(SPIN, spin_params(cfg.unit_cost), cfg.unit_cost)).map_err(SimError::from)?;
    }
    c.submit_tasks(app)?;
    c.run_until_client_idle()?;
    let rows = c
        .running_workers()
        .into_iter()
        .map(|n| DistributionRow {
            worker: c.network().label(n).to_string(),
            executed: c.worker(n).map_or(0, |w| w.executed_count()),
        })
        .collect();
    Ok(rows)
}

/// Sends `probes` pings from the master to uniformly drawn workers.
pub fn routing_run(bypass_proxy: bool, cfg: &ExperimentConfig) -> Result<RoutingRow, ExperimentError> {
    let mut spec = ScenarioSpec::new(DeploymentMode::WorkerDeployment, cfg.probe_workers, cfg.seed).with_latency(cfg.latency);
    spec.bypass_proxy = bypass_proxy;
    let mut c = deployed(spec)?;
    let targets: Vec<_> = c.running_workers().iter().filter_map(|n| c.worker_uri(*n).cloned()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.probes {
        let t = targets[rng.gen_range(0..targets.len())].clone();
        c.probe(t)?;
    }
    let settle = c.now() + 4 * cfg.latency.wan_ms().max(1);
    c.run_until_time(settle)?;
    let p = c.probe_stats();
    Ok(RoutingRow {
        path: if bypass_proxy { "bypass" } else { "proxy" },
        sent: p.sent,
        delivered: p.delivered,
        misdelivered: p.misdelivered,
    })
}

pub fn run(exp: Experiment, cfg: &ExperimentConfig) -> Result<Table, ExperimentError> {
    let table = match exp {
        Experiment::Fig21 | Experiment::Fig22 => {
            let mode = if exp == Experiment::Fig21 { DeploymentMode::WorkerDeployment } else { DeploymentMode::CloudDeployment };
            let rows = mandelbrot_series(mode, cfg)?;
            Table {
                columns: vec!["mode", "workers", "tiles", "elapsed_ms", "histogram_sha256"],
                rows: rows
                    .into_iter()
                    .map(|r| {
                        vec![r.mode.to_string(), r.workers.to_string(), r.tiles.to_string(), r.elapsed_ms.to_string(), r.histogram_sha256]
                    })
                    .collect(),
            }
        }
        Experiment::Fig23 => Table {
            columns: vec!["workers", "units", "elapsed_ms", "throughput_per_s"],
            rows: throughput_series(cfg)?
                .into_iter()
                .map(|r| vec![r.workers.to_string(), r.units.to_string(), r.elapsed_ms.to_string(), format!("{:.4}", r.throughput)])
                .collect(),
        },
        Experiment::Fig24 => Table {
            columns: vec!["worker", "executed"],
            rows: distribution(DeploymentMode::CloudDeployment, cfg)?
                .into_iter()
                .map(|r| vec![r.worker, r.executed.to_string()])
                .collect(),
        },
        Experiment::Routing => Table {
            columns: vec!["path", "sent", "delivered", "misdelivered"],
            rows: [false, true]
                .into_iter()
                .map(|b| routing_run(b, cfg))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .map(|r| vec![r.path.to_string(), r.sent.to_string(), r.delivered.to_string(), r.misdelivered.to_string()])
                .collect(),
        },
    };
    Ok(table)
}
