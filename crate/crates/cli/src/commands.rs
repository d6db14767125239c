//! Subcommand bodies, kept free of argument parsing so tests can call them.

use crate::report::{render_table, write_ppm, write_table_csv, write_trace_jsonl};
use anyhow::{Context, Result};
use paas_core::experiments::{ExperimentError, Table};
use paas_core::master::accounting::AccountingReport;
use paas_core::models::{mandelbrot_app, MandelbrotImage};
use paas_core::provisioning::DeploymentState;
use paas_core::sim::{Cloud, ScenarioSpec, SimError};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

pub fn deploy(spec: ScenarioSpec) -> Result<Cloud, SimError> {
    let mut c = Cloud::new(spec)?;
    c.deploy()?;
    Ok(c)
}

pub struct MandelbrotOutcome {
    pub cloud: Cloud,
    pub image: MandelbrotImage,
    pub elapsed_ms: u64,
}

/// Deploys, renders the image with one remote thread per tile and waits.
pub fn mandelbrot(spec: ScenarioSpec, width: u32, height: u32, tiles: u32, max_iter: u32) -> Result<MandelbrotOutcome> {
    let job = mandelbrot_app(width, height, tiles, max_iter).map_err(SimError::from)?;
    let mut cloud = deploy(spec)?;
    let t0 = cloud.now();
    let ids = cloud.start_mandelbrot(&job)?;
    let end = cloud.run_until_client_idle()?;
    let results = ids
        .iter()
        .map(|id| cloud.client().thread(*id).and_then(|t| t.result().cloned()).ok_or(ExperimentError::MissingResult(*id)))
        .collect::<Result<Vec<_>, _>>()?;
    let image = job.assemble(&results).ok_or(ExperimentError::Assembly)?;
    Ok(MandelbrotOutcome { cloud, image, elapsed_ms: end - t0 })
}

/// Deploys, idles for `run_ms`, deletes and reports the closed spans.
pub fn accounting(spec: ScenarioSpec, run_ms: u64) -> Result<(Cloud, AccountingReport), SimError> {
    let mut c = deploy(spec)?;
    c.run_until_time(c.now() + run_ms)?;
    c.delete()?;
    c.run_until(|c| c.pool().state() == DeploymentState::Deleted)?;
    let report = c.master().accounting_report(c.now());
    Ok((c, report))
}

/// Where a command writes its files; `None` keeps everything on stdout.
#[derive(Debug, Clone, Default)]
pub struct Output {
    pub dir: Option<PathBuf>,
}

impl Output {
    fn path(&self, name: &str) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.dir else { return Ok(None) };
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Some(dir.join(name)))
    }

    fn create(path: &Path) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
    }

    /// Prints `table` and, with an output directory, writes `<name>.csv`.
    pub fn table(&self, name: &str, table: &Table) -> Result<()> {
        print!("{}", render_table(table));
        if let Some(p) = self.path(&format!("{name}.csv"))? {
            write_table_csv(Self::create(&p)?, table)?;
        }
        Ok(())
    }

    pub fn trace(&self, cloud: &Cloud) -> Result<()> {
        if let Some(p) = self.path("trace.jsonl")? {
            write_trace_jsonl(Self::create(&p)?, cloud.trace())?;
        }
        Ok(())
    }

    /// Always writes the image; falls back to the working directory.
    pub fn ppm(&self, name: &str, image: &MandelbrotImage) -> Result<PathBuf> {
        let p = self.path(name)?.unwrap_or_else(|| PathBuf::from(name));
        write_ppm(Self::create(&p)?, image)?;
        Ok(p)
    }
}
