use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use paas_core::experiments::{self, Experiment, ExperimentConfig, TileWorkload};
use paas_core::sim::DeploymentMode;
use paas_sim::commands::{self, Output};
use paas_sim::config::load_config;
use paas_sim::report::{accounting_table, status_summary, status_table};
use paas_sim::scenario::{AlgorithmKind, ScenarioOptions};
use paas_sim::script::{parse_script, run_script};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "paas-sim", version, about = "Deterministic simulation of a master/worker PaaS on a public cloud")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Worker,
    Cloud,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Fixedqueue,
    Deadline,
}

#[derive(Args)]
struct Global {
    #[arg(long, value_enum, default_value = "worker", global = true)]
    mode: Mode,
    /// Initial worker count [default: 5, or the service configuration]
    #[arg(long, global = true)]
    workers: Option<u32>,
    #[arg(long, default_value_t = 42, global = true)]
    seed: u64,
    #[arg(long, default_value_t = 1, global = true)]
    lan_ms: u64,
    #[arg(long, default_value_t = 100, global = true)]
    wan_ms: u64,
    /// Enable autoscaling with this policy
    #[arg(long, value_enum, global = true)]
    algorithm: Option<Algo>,
    #[arg(long, default_value_t = 10, global = true)]
    queue_per_worker: u64,
    #[arg(long, default_value_t = 600_000, global = true)]
    deadline_ms: u64,
    /// Pool capacity override
    #[arg(long, global = true)]
    capacity: Option<u32>,
    /// Directory for CSV, trace and image output
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Service configuration (XML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Resource pool settings (TOML)
    #[arg(long, global = true)]
    pool: Option<PathBuf>,
}

#[derive(Args)]
struct Image {
    #[arg(long, default_value_t = 400)]
    width: u32,
    #[arg(long, default_value_t = 200)]
    height: u32,
    #[arg(long, default_value_t = 100)]
    tiles: u32,
    #[arg(long, default_value_t = 256)]
    max_iter: u32,
}

#[derive(Subcommand)]
enum Cmd {
    /// Deploy and print the status once every worker is up
    Deploy,
    /// Run a named benchmark: fig21, fig22, fig23, fig24 or routing
    Experiment {
        name: String,
        #[command(flatten)]
        image: Image,
        /// Replace Mandelbrot tiles by spin units of this cost
        #[arg(long)]
        uniform_cost: Option<u64>,
        #[arg(long, default_value_t = 1600)]
        units: u32,
        #[arg(long, default_value_t = 1600)]
        unit_cost: u64,
        #[arg(long, default_value_t = 1000)]
        probes: u32,
    },
    /// Deploy, then scale to a new worker count
    Scale {
        #[arg(long)]
        to: u32,
    },
    /// Deploy, optionally kill workers, and print the status later
    Status {
        #[arg(long, default_value_t = 0)]
        kill: usize,
        #[arg(long, default_value_t = 12_000)]
        run_ms: u64,
    },
    /// Deploy, idle, delete and print the billing records
    Accounting {
        #[arg(long, default_value_t = 3_600_000)]
        run_ms: u64,
    },
    /// Render the Mandelbrot set on the cloud and write a PPM image
    Mandelbrot {
        #[command(flatten)]
        image: Image,
        #[arg(long, default_value = "mandelbrot.ppm")]
        output: String,
    },
    /// Replay a command list
    Script { file: PathBuf },
    /// Check a service configuration
    Validate,
}

impl Global {
    fn options(&self) -> ScenarioOptions {
        ScenarioOptions {
            mode: match self.mode {
                Mode::Worker => DeploymentMode::WorkerDeployment,
                Mode::Cloud => DeploymentMode::CloudDeployment,
            },
            workers: self.workers,
            seed: self.seed,
            lan_ms: self.lan_ms,
            wan_ms: self.wan_ms,
            algorithm: self.algorithm.map(|a| match a {
                Algo::Fixedqueue => AlgorithmKind::FixedQueue,
                Algo::Deadline => AlgorithmKind::Deadline,
            }),
            queue_per_worker: self.queue_per_worker,
            deadline_ms: self.deadline_ms,
            capacity: self.capacity,
            config: self.config.clone(),
            pool: self.pool.clone(),
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let opts = cli.global.options();
    let out = Output { dir: cli.global.out.clone() };
    match cli.command {
        Cmd::Deploy => {
            let c = commands::deploy(opts.build()?)?;
            let s = c.status();
            println!("{}", status_summary(&s));
            out.table("status", &status_table(&s))?;
            out.trace(&c)?;
        }
        Cmd::Experiment { name, image, uniform_cost, units, unit_cost, probes } => {
            let exp = Experiment::from_name(&name)?;
            let cfg = ExperimentConfig {
                seed: opts.seed,
                latency: opts.latency()?,
                width: image.width,
                height: image.height,
                tiles: image.tiles,
                max_iter: image.max_iter,
                tile_workload: uniform_cost.map_or(TileWorkload::Mandelbrot, |cost| TileWorkload::Uniform { cost }),
                units,
                unit_cost,
                probes,
                ..ExperimentConfig::default()
            };
            let table = experiments::run(exp, &cfg)?;
            out.table(exp.name(), &table)?;
        }
        Cmd::Scale { to } => {
            let mut c = commands::deploy(opts.build()?)?;
            c.scale(to)?;
            c.run_until(|c| c.running_workers().len() == to as usize && c.is_ready())?;
            let s = c.status();
            println!("{}", status_summary(&s));
            out.table("status", &status_table(&s))?;
            out.trace(&c)?;
        }
        Cmd::Status { kill, run_ms } => {
            let mut c = commands::deploy(opts.build()?)?;
            for n in c.running_workers().into_iter().take(kill) {
                c.kill_worker(n)?;
            }
            c.run_until_time(c.now() + run_ms)?;
            let s = c.status();
            println!("{}", status_summary(&s));
            out.table("status", &status_table(&s))?;
            out.trace(&c)?;
        }
        Cmd::Accounting { run_ms } => {
            let (c, report) = commands::accounting(opts.build()?, run_ms)?;
            out.table("accounting", &accounting_table(&report))?;
            println!("total {} h, {:.2}", report.total_hours, report.total_amount);
            out.trace(&c)?;
        }
        Cmd::Mandelbrot { image, output } => {
            let r = commands::mandelbrot(opts.build()?, image.width, image.height, image.tiles, image.max_iter)?;
            let path = out.ppm(&output, &r.image)?;
            println!("{} tiles in {} ms, image written to {}", image.tiles, r.elapsed_ms, path.display());
            out.trace(&r.cloud)?;
        }
        Cmd::Script { file } => {
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let cmds = parse_script(&text)?;
            let (c, outputs) = run_script(opts.build()?, &cmds)?;
            for o in &outputs {
                println!("# line {} {} at t={} ms", o.line, o.name, o.at);
                out.table(&format!("{}_line{}", o.name, o.line), &o.table)?;
            }
            out.trace(&c)?;
        }
        Cmd::Validate => {
            let Some(path) = &opts.config else { bail!("validate needs --config") };
            let cfg = load_config(path)?;
            cfg.validate_for(opts.mode)?;
            println!("{}: valid for {} deployment", cfg.service_name, opts.mode);
            for r in &cfg.roles {
                println!("  role {} instances={} level={}", r.name, r.instances, r.settings.deployment_level.name());
                for k in &r.settings.ignored {
                    println!("    ignored setting {k}");
                }
            }
        }
    }
    Ok(())
}
