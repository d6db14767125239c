//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use paas_core::clock::MS_PER_MINUTE;
use paas_core::experiments::{
    distribution, mandelbrot_run, routing_run, throughput_series, ExperimentConfig, TileWorkload,
};
use paas_core::master::NodeStatus;
use paas_core::models::{JoinOutcome, ModelError, TaskSpec, ThreadState};
use paas_core::netsim::{EndpointSpec, LatencyProfile, NetError, Network, TraceKind};
use paas_core::provisioning::{Algorithm, DeploymentState};
use paas_core::sim::{Cloud, DeploymentMode, ScenarioSpec, SimError};
use paas_core::storage::{blob_name, content_hash, Direction, FileRole, Phase};
use paas_core::worker::workload::{spin_params, SPIN};
use paas_core::{AppState, UnitState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::time::Instant;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

const HOUR: u64 = 3_600_000;

fn hand_ceil_hours(ms: u64) -> u64 {
    let whole = ms / HOUR;
    if ms % HOUR == 0 {
        whole
    } else {
        whole + 1
    }
}

fn spin_tasks(c: &mut Cloud, n: u32, cost: u64) -> paas_core::AppId {
    let mut app = c.new_task_app();
    for _ in 0..n {
        app.add_task(TaskSpec::new(SPIN, spin_params(cost), cost)).unwrap();
    }
    c.submit_tasks(app).unwrap()
}

fn routing() -> Outcome {
    let started = Instant::now();
    let cfg = ExperimentConfig::default();
    let proxied = routing_run(false, &cfg).map_err(e)?;
    let bypass = routing_run(true, &cfg).map_err(e)?;
    let secs = started.elapsed().as_secs_f64();
    ensure(proxied.sent == 1000 && proxied.delivered == 1000, format!("proxy delivered {}/{}", proxied.delivered, proxied.sent))?;
    ensure(proxied.misdelivered == 0, format!("proxy misdelivered {}", proxied.misdelivered))?;
    ensure(bypass.misdelivered >= 1, "bypass produced no misdelivery")?;
    ensure(secs < 5.0, format!("took {secs:.2}s"))?;
    Ok(format!("proxy 0/1000 misdelivered, bypass {}/1000, {secs:.2}s", bypass.misdelivered))
}

fn speedup() -> Outcome {
    let mut notes = Vec::new();
    for mode in [DeploymentMode::WorkerDeployment, DeploymentMode::CloudDeployment] {
        let cfg = ExperimentConfig::default();
        let t: Vec<u64> = [1, 5, 10]
            .iter()
            .map(|&w| mandelbrot_run(mode, w, &cfg).map(|r| r.row.elapsed_ms))
            .collect::<Result<_, _>>()
            .map_err(e)?;
        ensure(t[0] > t[1] && t[1] > t[2], format!("{mode}: elapsed {t:?} not strictly decreasing"))?;
        let uniform = ExperimentConfig { tile_workload: TileWorkload::Uniform { cost: 1600 }, ..cfg };
        let u1 = mandelbrot_run(mode, 1, &uniform).map_err(e)?.row.elapsed_ms;
        let u10 = mandelbrot_run(mode, 10, &uniform).map_err(e)?.row.elapsed_ms;
        let ratio = u1 as f64 / u10 as f64;
        ensure(ratio >= 7.0, format!("{mode}: uniform speedup {ratio:.2} < 7"))?;
        notes.push(format!("{mode} {t:?} uniform x{ratio:.2}"));
    }
    Ok(notes.join("; "))
}

fn mode_gap() -> Outcome {
    let cfg = ExperimentConfig { latency: LatencyProfile::new(1, 100).map_err(e)?, ..ExperimentConfig::default() };
    let mut notes = Vec::new();
    for w in [1, 5, 10] {
        let worker = mandelbrot_run(DeploymentMode::WorkerDeployment, w, &cfg).map_err(e)?.row.elapsed_ms;
        let cloud = mandelbrot_run(DeploymentMode::CloudDeployment, w, &cfg).map_err(e)?.row.elapsed_ms;
        ensure(worker > cloud, format!("{w} workers: worker {worker} <= cloud {cloud}"))?;
        notes.push(format!("{w}: {worker}>{cloud}"));
    }
    Ok(notes.join(", "))
}

fn throughput() -> Outcome {
    let rows = throughput_series(&ExperimentConfig::default()).map_err(e)?;
    for pair in rows.windows(2) {
        ensure(
            pair[1].throughput >= pair[0].throughput,
            format!("throughput dropped {} -> {} workers", pair[0].workers, pair[1].workers),
        )?;
    }
    let ratio = rows[15].throughput / rows[0].throughput;
    ensure(rows[0].workers == 1 && rows[15].workers == 16, "unexpected counts")?;
    ensure(ratio >= 12.0, format!("16-worker ratio {ratio:.2} < 12"))?;
    Ok(format!("nondecreasing over 1..16, x{ratio:.2} at 16"))
}

fn even_distribution() -> Outcome {
    let cfg = ExperimentConfig::default();
    let rows = distribution(DeploymentMode::CloudDeployment, &cfg).map_err(e)?;
    ensure(rows.len() == 10, format!("{} workers", rows.len()))?;
    let counts: Vec<u64> = rows.iter().map(|r| r.executed).collect();
    ensure(counts.iter().all(|c| (8..=12).contains(c)), format!("counts {counts:?}"))?;
    ensure(counts.iter().sum::<u64>() == 100, "units lost")?;
    let sync = ExperimentConfig { latency: LatencyProfile::zero(), ..cfg };
    let exact: Vec<u64> = distribution(DeploymentMode::CloudDeployment, &sync).map_err(e)?.iter().map(|r| r.executed).collect();
    ensure(exact.iter().all(|&c| c == 10), format!("zero-jitter counts {exact:?}"))?;
    Ok(format!("{counts:?}; zero-jitter all 10"))
}

fn provisioning() -> Outcome {
    let mut spec = ScenarioSpec::new(DeploymentMode::WorkerDeployment, 1, 11).with_capacity(16);
    spec.autoscale = Some(Algorithm::FixedQueue { queue_per_worker: 10 });
    let mut c = Cloud::new(spec).map_err(e)?;
    c.deploy().map_err(e)?;
    let app = spin_tasks(&mut c, 150, 16_000);
    c.run_until_client_idle().map_err(e)?;
    ensure(c.client().task_app(app).map(|a| a.state()) == Some(AppState::Finished), "application did not finish")?;
    let units = &c.master().app(app).ok_or("app missing")?.units;
    ensure(units.iter().all(|u| u.state == UnitState::Completed), "not all units completed")?;
    ensure(c.peak_workers() == 15, format!("peak {} workers", c.peak_workers()))?;
    let first = c.trace().of_kind(TraceKind::Provision).find(|r| r.detail.starts_with("scale out")).ok_or("no scale-out")?;
    ensure(first.detail == "scale out 1 -> 15", format!("first scale-out {:?}", first.detail))?;
    c.run_until(|c| c.pool().deployment().is_some_and(|d| d.active_workers() == 1)).map_err(e)?;
    c.delete().map_err(e)?;
    c.run_until(|c| c.pool().state() == DeploymentState::Deleted).map_err(e)?;
    let open = c.master().accounting_report(c.now()).open_spans();
    ensure(open == 0, format!("{open} open spans"))?;
    Ok("1 -> 15 -> 1 -> Deleted, 150/150 completed, 0 open spans".into())
}

fn billing() -> Outcome {
    let mut c = Cloud::new(ScenarioSpec::new(DeploymentMode::WorkerDeployment, 3, 5)).map_err(e)?;
    c.deploy().map_err(e)?;
    let report = c.master().accounting_report(c.now());
    let boot = report.records.iter().filter(|r| r.instance.starts_with("Worker")).map(|r| r.start).max().ok_or("no workers")?;
    c.run_until_time(boot + 59 * MS_PER_MINUTE).map_err(e)?;
    c.scale(2).map_err(e)?;
    c.run_until_time(boot + 60 * MS_PER_MINUTE).map_err(e)?;
    c.scale(1).map_err(e)?;
    c.run_until_time(boot + 61 * MS_PER_MINUTE).map_err(e)?;
    c.delete().map_err(e)?;
    c.run_until(|c| c.pool().state() == DeploymentState::Deleted).map_err(e)?;
    let report = c.master().accounting_report(c.now());
    let mut workers: Vec<_> = report.records.iter().filter(|r| r.instance.starts_with("Worker")).collect();
    workers.sort_by_key(|r| r.end - r.start);
    let spans: Vec<u64> = workers.iter().map(|r| (r.end - r.start) / MS_PER_MINUTE).collect();
    ensure(spans == [59, 60, 61], format!("worker spans {spans:?} min"))?;
    let hours: Vec<u64> = workers.iter().map(|r| r.billed_hours).collect();
    ensure(hours == [1, 1, 2], format!("billed {hours:?}"))?;
    let mut hand_hours = 0;
    let mut hand_amount = 0.0;
    for r in &report.records {
        let h = hand_ceil_hours(r.end - r.start);
        let rate = if r.size.name() == "Small" { 1.0 } else { 2.0 };
        ensure(r.billed_hours == h, format!("{}: {} != {h}", r.instance, r.billed_hours))?;
        hand_hours += h;
        hand_amount += h as f64 * rate;
    }
    ensure(report.total_hours == hand_hours, "total hours mismatch")?;
    ensure(report.total_amount == hand_amount, "total amount mismatch")?;
    Ok(format!("workers {hours:?} h, total {hand_hours} h / {hand_amount:.2}"))
}

fn file_transfer() -> Outcome {
    let mut c = Cloud::new(ScenarioSpec::new(DeploymentMode::WorkerDeployment, 4, 9)).map_err(e)?;
    c.deploy().map_err(e)?;
    let max = 4 * 1024 * 1024;
    let mut files = Vec::new();
    let mut app = c.new_task_app();
    for i in 0..50u64 {
        let len = (i * max / 49) as usize;
        let data: Vec<u8> = (0..len).map(|j| (j as u64 * 31 + i * 7) as u8).collect();
        let mut t = TaskSpec::new(SPIN, spin_params(160), 160);
        t.inputs.push((format!("in{i}.bin"), data.clone()));
        t.outputs.push("out.bin".into());
        files.push(data);
        app.add_task(t).map_err(e)?;
    }
    let app = c.submit_tasks(app).map_err(e)?;
    c.run_until_client_idle().map_err(e)?;
    ensure(c.client().task_app(app).map(|a| a.state()) == Some(AppState::Finished), "application did not finish")?;

    let units = c.master().app(app).ok_or("app missing")?.units.clone();
    let pool = c.pool().config().clone();
    let now = c.now();
    let conn = c.storage_mut().open_channel(&pool.storage_account_name, &pool.storage_container, now).map_err(e)?;
    for (u, data) in units.iter().zip(&files) {
        let name = blob_name(app, u.id, FileRole::Input, &u.input_files[0].name);
        let got = c.storage_mut().download_file(&conn, &name, now).map_err(e)?;
        ensure(content_hash(&got.data) == content_hash(data) && got.data.len() == data.len(), format!("{name} hash mismatch"))?;
    }
    let outputs = c.download_outputs(app).map_err(e)?;
    ensure(outputs.len() == 50, format!("{} outputs", outputs.len()))?;

    let mut phases: BTreeMap<_, (u32, u32, u64, u64)> = BTreeMap::new();
    for n in c.storage().history() {
        let p = phases.entry(n.transfer).or_default();
        match n.phase {
            Phase::Start => {
                p.0 += 1;
                p.2 = n.at;
            }
            Phase::End => {
                p.1 += 1;
                p.3 = n.at;
            }
        }
    }
    ensure(phases.values().all(|&(s, en, ts, te)| s == 1 && en == 1 && ts <= te), "transfer without exactly one Start and End")?;

    let starts: BTreeMap<String, u64> = c.trace().of_kind(TraceKind::UnitStart).map(|r| (r.detail.clone(), r.time)).collect();
    for u in &units {
        let name = blob_name(app, u.id, FileRole::Input, &u.input_files[0].name);
        let end = c
            .storage()
            .history()
            .iter()
            .find(|n| n.file == name && n.phase == Phase::End && n.direction == Direction::Upload)
            .ok_or(format!("no upload end for {name}"))?
            .at;
        let start = *starts.get(&u.id.to_string()).ok_or(format!("{} never started", u.id))?;
        ensure(start >= end, format!("{} started at {start} before input end {end}", u.id))?;
    }
    Ok(format!("50 files 0 B..4 MiB verified, {} transfers paired", phases.len()))
}

fn failures() -> Outcome {
    let mut c = Cloud::new(ScenarioSpec::new(DeploymentMode::WorkerDeployment, 10, 13)).map_err(e)?;
    c.deploy().map_err(e)?;
    let app = spin_tasks(&mut c, 100, 16_000);
    c.run_until_time(c.now() + 25_000).map_err(e)?;
    let victims: Vec<_> = c.running_workers().into_iter().step_by(3).take(3).collect();
    for v in &victims {
        c.kill_worker(*v).map_err(e)?;
    }
    c.run_until_client_idle().map_err(e)?;
    let units = &c.master().app(app).ok_or("app missing")?.units;
    ensure(units.len() == 100 && units.iter().all(|u| u.state == UnitState::Completed), "not all units completed")?;
    ensure(units.iter().all(|u| c.master().completions(u.id) == 1), "a unit completed more than once")?;
    let dead = c.status().workers.iter().filter(|w| w.status == Some(NodeStatus::Dead)).count();
    ensure(dead == 3, format!("{dead} workers marked dead"))?;
    let requeued = c.trace().of_kind(TraceKind::UnitRequeue).count();
    Ok(format!("100/100 completed once each, {requeued} requeues, 3 dead"))
}

fn trace_text(c: &Cloud) -> String {
    c.trace().records().iter().map(|r| format!("{r}\n")).collect()
}

fn determinism() -> Outcome {
    let scenario = |seed: u64| -> Result<String, String> {
        let mut spec = ScenarioSpec::new(DeploymentMode::WorkerDeployment, 4, seed).with_capacity(8);
        spec.autoscale = Some(Algorithm::FixedQueue { queue_per_worker: 10 });
        let mut c = Cloud::new(spec).map_err(e)?;
        c.deploy().map_err(e)?;
        spin_tasks(&mut c, 80, 4_000);
        c.run_until_time(c.now() + 10_000).map_err(e)?;
        let victim = c.running_workers()[1];
        c.kill_worker(victim).map_err(e)?;
        c.run_until_client_idle().map_err(e)?;
        c.delete().map_err(e)?;
        c.run_until(|c| c.pool().state() == DeploymentState::Deleted).map_err(e)?;
        Ok(trace_text(&c))
    };
    let a = scenario(21)?;
    ensure(a == scenario(21)?, "scenario traces differ")?;
    let cfg = ExperimentConfig { width: 200, height: 100, tiles: 25, max_iter: 128, ..ExperimentConfig::default() };
    let m1 = mandelbrot_run(DeploymentMode::WorkerDeployment, 5, &cfg).map_err(e)?;
    let m2 = mandelbrot_run(DeploymentMode::WorkerDeployment, 5, &cfg).map_err(e)?;
    ensure(m1.trace_digest == m2.trace_digest && m1.image == m2.image, "mandelbrot traces differ")?;
    let r = ExperimentConfig::default();
    ensure(routing_run(true, &r).map_err(e)? == routing_run(true, &r).map_err(e)?, "routing differs")?;
    Ok(format!("{} trace lines identical; mandelbrot and routing identical", a.lines().count()))
}

fn endpoint_cap() -> Outcome {
    let mut net = Network::new(1, LatencyProfile::default());
    let eps = |n: usize| (0..n).map(|i| EndpointSpec::input(format!("ep{i}"), 8000 + i as u16)).collect::<Vec<_>>();
    net.declare_role("Worker", "svc.cloudapp.net", eps(5)).map_err(e)?;
    match net.declare_role("Worker2", "svc.cloudapp.net", eps(6)) {
        Err(NetError::EndpointLimitExceeded { count: 6, .. }) => Ok("5 accepted, 6th rejected".into()),
        other => Err(format!("6 endpoints gave {other:?}")),
    }
}

fn thread_semantics() -> Outcome {
    let mut c = Cloud::new(ScenarioSpec::new(DeploymentMode::CloudDeployment, 10, 17)).map_err(e)?;
    c.deploy().map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let ids: Vec<_> = (0..1000).map(|i| c.create_thread(SPIN, spin_params(160 * (1 + i % 5)), 160 * (1 + i % 5))).collect();
    let (mut accepted, mut rejected, mut joins) = (0u32, 0u32, 0u32);
    let mut bad_joins = Vec::new();
    for _ in 0..4000 {
        let id = ids[rng.gen_range(0..ids.len())];
        let before = c.client().thread(id).ok_or("thread missing")?.state();
        let op = rng.gen_range(0..3);
        let legal = match op {
            0 => before == ThreadState::Unstarted,
            1 => before != ThreadState::Unstarted,
            _ => !matches!(before, ThreadState::Aborted | ThreadState::Stopped),
        };
        let result: Result<(), SimError> = match op {
            0 => c.start_thread(id),
            1 => c.join_thread(id).map(|outcome| {
                joins += 1;
                let after = c.client().thread(id).map(|t| t.state());
                if !matches!(
                    (&outcome, after),
                    (JoinOutcome::Aborted, Some(ThreadState::Aborted)) | (JoinOutcome::Stopped(_), Some(ThreadState::Stopped))
                ) {
                    bad_joins.push(format!("join of {id} gave {outcome:?} in state {after:?}"));
                }
            }),
            _ => c.abort_thread(id),
        };
        match (legal, result) {
            (true, Ok(())) => accepted += 1,
            (false, Err(SimError::Model(ModelError::InvalidThreadState { .. }))) => rejected += 1,
            (_, Err(err)) => return Err(format!("op {op} on {id} in {before:?} failed: {err}")),
            (false, Ok(())) => return Err(format!("illegal op {op} on {id} in {before:?} accepted")),
        }
    }
    ensure(bad_joins.is_empty(), bad_joins.join("; "))?;
    c.run_until_client_idle().map_err(e)?;
    ensure(c.master().invariant_violation().is_none(), "master invariant violated")?;
    let unstarted_join = ids.iter().find(|id| c.client().thread(**id).is_some_and(|t| t.state() == ThreadState::Unstarted));
    if let Some(id) = unstarted_join {
        ensure(
            matches!(c.client().thread(*id).map(|t| t.join()), Some(Err(ModelError::InvalidThreadState { .. }))),
            "join before start accepted",
        )?;
    }
    Ok(format!("{accepted} legal accepted, {rejected} illegal rejected, {joins} joins terminal"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("routing correctness", routing),
        ("speedup shape", speedup),
        ("deployment-mode gap", mode_gap),
        ("throughput scaling", throughput),
        ("even distribution", even_distribution),
        ("provisioning lifecycle", provisioning),
        ("billing", billing),
        ("file transfer", file_transfer),
        ("failure handling", failures),
        ("determinism", determinism),
        ("endpoint cap", endpoint_cap),
        ("thread-model semantics", thread_semantics),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = run();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} [{secs:.2}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
