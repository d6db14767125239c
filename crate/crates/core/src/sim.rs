//! A whole deployment on one event loop.
//!
//! [`Cloud`] owns the network, the master, the workers, the message proxy,
//! the client, the resource pool and storage, and routes every message
//! between them in virtual time. Two layouts are supported:
//!
//! - [`DeploymentMode::WorkerDeployment`]: the master and the client sit on
//!   premises; workers and one message proxy run in the cloud. Workers
//!   advertise the proxy's public address with their internal endpoint encoded
//!   in the URI, and start heartbeating only once the proxy is ready.
//! - [`DeploymentMode::CloudDeployment`]: the master is itself a role
//!   instance. Workers talk to it over internal endpoints and no proxy is
//!   deployed; only the client is outside.

use crate::clock::Millis;
use crate::instance::InstanceSize;
use crate::master::{Master, MasterConfig, MasterError, MasterEvent, MasterStatus, NodeStatus};
use crate::message::{authenticate, Ack, AckEvent, Message, MessageId, Outgoing, Payload, SharedKey};
use crate::models::{ClientActor, JoinOutcome, MandelbrotJob, ModelError, TaskApplication};
use crate::netsim::{
    EndpointSpec, EventLoop, LatencyProfile, NetError, Network, NodeId, Region, RoleHandle, Route, Trace, TraceKind,
};
use crate::provisioning::{
    decide_deadline_priority, decide_fixed_queue, Algorithm, DeploymentLayout, DeploymentState, InstanceId,
    InstanceRole, PoolAction, PoolConfig, ProvisionError, ResourcePool, DEFAULT_BOOT_DELAY, DEFAULT_TEARDOWN_DELAY,
};
use crate::proxy::{MessageProxy, ProxyAction};
use crate::storage::{blob_name, FileRole, LocalFiles, Storage, StorageError};
use crate::uri::{EndpointAddr, NodeUri};
use crate::work::{AppId, UnitId};
use crate::worker::{FileAccess, SubmitOutcome, Worker, WorkloadRegistry};
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

pub const PROXY_PORT: u16 = 9090;
pub const MASTER_PUBLIC_PORT: u16 = 3333;
/// Input port the worker role exposes when messages bypass the proxy.
pub const BYPASS_PORT: u16 = 9091;
pub const CLIENT_ADDR: (&str, u16) = ("client.onprem", 5000);
pub const DEFAULT_PROXY_READY_DELAY: Millis = 500;
/// One virtual week.
pub const DEFAULT_HORIZON: Millis = 7 * 24 * 3_600_000;

const CONTROL: &str = "control";
const MESSAGING: &str = "messaging";
const CLIENT_EP: &str = "client";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DeploymentMode {
    WorkerDeployment,
    CloudDeployment,
}

impl DeploymentMode {
    pub fn name(self) -> &'static str {
        match self {
            DeploymentMode::WorkerDeployment => "worker",
            DeploymentMode::CloudDeployment => "cloud",
        }
    }
}

impl fmt::Display for DeploymentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub mode: DeploymentMode,
    pub latency: LatencyProfile,
    /// Initial worker count; also the scale-in floor under autoscaling.
    pub workers: u32,
    pub seed: u64,
    pub pool: PoolConfig,
    pub key: SharedKey,
    /// Master address in worker deployments.
    pub master_uri: NodeUri,
    pub worker_size: InstanceSize,
    pub autoscale: Option<Algorithm>,
    pub boot_delay: Millis,
    pub teardown_delay: Millis,
    pub proxy_ready_delay: Millis,
    pub master: MasterConfig,
    /// Address workers through their own role's balancer instead of the proxy.
    pub bypass_proxy: bool,
    pub horizon: Millis,
}

impl ScenarioSpec {
    pub fn new(mode: DeploymentMode, workers: u32, seed: u64) -> Self {
        Self {
            mode,
            latency: LatencyProfile::default(),
            workers,
            seed,
            pool: PoolConfig::example(workers.max(16)),
            key: SharedKey::new("Qq6dthHKWph0QkS5X7rJL0qLeR14IQfgMexGapTBouijEZzy2XGM3ytK/uldFHQB"),
            master_uri: NodeUri::direct("localhost", 3333),
            worker_size: InstanceSize::Small,
            autoscale: None,
            boot_delay: DEFAULT_BOOT_DELAY,
            teardown_delay: DEFAULT_TEARDOWN_DELAY,
            proxy_ready_delay: DEFAULT_PROXY_READY_DELAY,
            master: MasterConfig::default(),
            bypass_proxy: false,
            horizon: DEFAULT_HORIZON,
        }
    }

    pub fn with_latency(mut self, latency: LatencyProfile) -> Self {
        self.latency = latency;
        self
    }

    pub fn with_capacity(mut self, capacity: u32) -> Self {
        self.pool.capacity = capacity;
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Provision(#[from] ProvisionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Master(#[from] MasterError),
    #[error("no events left at {0} ms before the condition held")]
    Stalled(Millis),
    #[error("node {0:?} is not a running worker")]
    NotAWorker(NodeId),
    #[error("mode {0} has no on-premises master to send from")]
    NoMaster(DeploymentMode),
}

#[derive(Debug, Clone)]
enum Event {
    Deliver { to: NodeId, msg: Message },
    Boot { instance: InstanceId },
    Heartbeat { node: NodeId },
    Complete { node: NodeId, token: u64 },
    Sweep,
    ProxyReady,
    Teardown,
    Wake,
}

/// Routing-probe tallies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProbeStats {
    pub sent: u64,
    pub delivered: u64,
    pub misdelivered: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerStatus {
    pub label: String,
    pub uri: NodeUri,
    pub running: bool,
    pub status: Option<NodeStatus>,
    pub busy: bool,
    pub executed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CloudStatus {
    pub now: Millis,
    pub mode: DeploymentMode,
    pub deployment: DeploymentState,
    pub proxy_ready: Option<bool>,
    pub workers: Vec<WorkerStatus>,
    pub master: MasterStatus,
}

struct Roles {
    worker: RoleHandle,
    proxy: Option<RoleHandle>,
    master: Option<RoleHandle>,
}

struct ProxyInstance {
    node: NodeId,
    proxy: MessageProxy,
}

pub struct Cloud {
    spec: ScenarioSpec,
    net: Network,
    events: EventLoop<Event>,
    trace: Trace,
    storage: Storage,
    registry: WorkloadRegistry,
    master: Master,
    master_node: Option<NodeId>,
    client: ClientActor,
    client_node: NodeId,
    pool: ResourcePool,
    roles: Roles,
    front: Option<EndpointAddr>,
    proxy: Option<ProxyInstance>,
    workers: BTreeMap<NodeId, Worker>,
    heartbeating: BTreeSet<NodeId>,
    instance_nodes: BTreeMap<InstanceId, NodeId>,
    node_instances: BTreeMap<NodeId, InstanceId>,
    next_msg: u64,
    pool_log_seen: usize,
    probes: ProbeStats,
    peak_workers: u32,
}

impl Cloud {
    pub fn new(spec: ScenarioSpec) -> Result<Self, SimError> {
        let mut pool = ResourcePool::new(spec.pool.clone())?;
        pool.boot_delay = spec.boot_delay;
        pool.teardown_delay = spec.teardown_delay;
        let mut net = Network::new(spec.seed, spec.latency);
        let public_host = format!("{}.cloudapp.net", spec.pool.hosted_service_name);

        let mut worker_eps = alloc::vec![EndpointSpec::internal(CONTROL)];
        if spec.bypass_proxy {
            worker_eps.push(EndpointSpec::input(MESSAGING, BYPASS_PORT));
        }
        let (roles, master, master_node, master_public, front) = match spec.mode {
            DeploymentMode::WorkerDeployment => {
                let proxy = net.declare_role(
                    InstanceRole::Proxy.name(),
                    public_host.clone(),
                    alloc::vec![EndpointSpec::input(MESSAGING, PROXY_PORT)],
                )?;
                let worker = net.declare_role(InstanceRole::Worker.name(), public_host.clone(), worker_eps)?;
                let node = net.add_external_node("Master", spec.master_uri.addr(), Region::OnPrem)?;
                let front = if spec.bypass_proxy {
                    net.role_input_addr(worker, MESSAGING)
                } else {
                    net.role_input_addr(proxy, MESSAGING)
                };
                let master = Master::new(spec.master_uri.clone(), spec.key.clone(), spec.master);
                (Roles { worker, proxy: Some(proxy), master: None }, master, Some(node), spec.master_uri.clone(), front)
            }
            DeploymentMode::CloudDeployment => {
                let m = net.declare_role(
                    InstanceRole::Master.name(),
                    public_host.clone(),
                    alloc::vec![EndpointSpec::input(CLIENT_EP, MASTER_PUBLIC_PORT), EndpointSpec::internal(CONTROL)],
                )?;
                let worker = net.declare_role(InstanceRole::Worker.name(), public_host.clone(), worker_eps)?;
                let public = NodeUri::direct(public_host.clone(), MASTER_PUBLIC_PORT);
                let front = if spec.bypass_proxy { net.role_input_addr(worker, MESSAGING) } else { None };
                let master = Master::new(public.clone(), spec.key.clone(), spec.master);
                (Roles { worker, proxy: None, master: Some(m) }, master, None, public, front)
            }
        };
        let client_addr = EndpointAddr::new(CLIENT_ADDR.0, CLIENT_ADDR.1);
        let client_node = net.add_external_node("Client", client_addr.clone(), Region::OnPrem)?;
        let client = ClientActor::new(NodeUri::direct(client_addr.host, client_addr.port), master_public, "client");

        let mut storage = Storage::new();
        storage.add_account(spec.pool.storage_account_name.clone(), spec.pool.storage_account_key.clone());

        let mut events = EventLoop::new(spec.horizon);
        events.schedule_at(spec.master.heartbeat_interval, Event::Sweep);

        Ok(Self {
            net,
            events,
            trace: Trace::new(),
            storage,
            registry: WorkloadRegistry::with_builtins(),
            master,
            master_node,
            client,
            client_node,
            pool,
            roles,
            front,
            proxy: None,
            workers: BTreeMap::new(),
            heartbeating: BTreeSet::new(),
            instance_nodes: BTreeMap::new(),
            node_instances: BTreeMap::new(),
            next_msg: 0,
            pool_log_seen: 0,
            probes: ProbeStats::default(),
            peak_workers: 0,
            spec,
        })
    }

    // --- accessors ----------------------------------------------------------

    pub fn now(&self) -> Millis {
        self.events.now()
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn master(&self) -> &Master {
        &self.master
    }

    pub fn client(&self) -> &ClientActor {
        &self.client
    }

    pub fn client_mut(&mut self) -> &mut ClientActor {
        &mut self.client
    }

    pub fn pool(&self) -> &ResourcePool {
        &self.pool
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn storage_mut(&mut self) -> &mut Storage {
        &mut self.storage
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn registry_mut(&mut self) -> &mut WorkloadRegistry {
        &mut self.registry
    }

    pub fn probe_stats(&self) -> ProbeStats {
        self.probes
    }

    /// Most worker instances live (booting or running) at any one time.
    pub fn peak_workers(&self) -> u32 {
        self.peak_workers
    }

    pub fn workers(&self) -> impl Iterator<Item = (NodeId, &Worker)> {
        self.workers.iter().map(|(n, w)| (*n, w))
    }

    pub fn worker(&self, node: NodeId) -> Option<&Worker> {
        self.workers.get(&node)
    }

    /// Running worker nodes in start order.
    pub fn running_workers(&self) -> Vec<NodeId> {
        self.workers.keys().copied().filter(|n| self.net.is_running(*n)).collect()
    }

    pub fn worker_uri(&self, node: NodeId) -> Option<&NodeUri> {
        self.workers.get(&node).map(|w| &w.node)
    }

    pub fn status(&self) -> CloudStatus {
        let workers = self
            .workers
            .iter()
            .map(|(n, w)| {
                let m = self.master.member(&w.node);
                WorkerStatus {
                    label: self.net.label(*n).to_string(),
                    uri: w.node.clone(),
                    running: self.net.is_running(*n),
                    status: m.map(|m| m.status),
                    busy: w.is_busy(),
                    executed: w.executed_count(),
                }
            })
            .collect();
        CloudStatus {
            now: self.now(),
            mode: self.spec.mode,
            deployment: self.pool.state(),
            proxy_ready: self.roles.proxy.map(|_| self.proxy.as_ref().is_some_and(|p| p.proxy.is_ready())),
            workers,
            master: self.master.status(),
        }
    }

    fn deployment_id(&self) -> String {
        self.pool.deployment().map(|d| d.id.clone()).unwrap_or_default()
    }

    // --- driving ------------------------------------------------------------

    /// Processes one event. False when nothing is pending.
    pub fn step(&mut self) -> Result<bool, SimError> {
        let Some((_, ev)) = self.events.step()? else { return Ok(false) };
        match ev {
            Event::Deliver { to, msg } => self.deliver(to, msg),
            Event::Boot { instance } => self.on_boot(instance)?,
            Event::Heartbeat { node } => self.on_heartbeat_tick(node),
            Event::Complete { node, token } => self.on_complete(node, token),
            Event::Sweep => {
                let outs = self.master.failure_sweep(self.now());
                self.send_from_master(outs);
                self.autoscale()?;
                self.events.schedule_in(self.spec.master.heartbeat_interval, Event::Sweep);
            }
            Event::ProxyReady => self.on_proxy_ready(),
            Event::Teardown => {
                self.pool.teardown_complete(self.now())?;
            }
            Event::Wake => {}
        }
        self.feed_notices();
        self.drain_master_events();
        self.log_pool_changes();
        Ok(true)
    }

    /// Steps until `done` holds.
    pub fn run_until(&mut self, mut done: impl FnMut(&Self) -> bool) -> Result<Millis, SimError> {
        while !done(self) {
            if !self.step()? {
                return Err(SimError::Stalled(self.now()));
            }
        }
        Ok(self.now())
    }

    /// Processes everything due up to and including `t`, leaving the clock at `t`.
    pub fn run_until_time(&mut self, t: Millis) -> Result<(), SimError> {
        if t > self.now() {
            self.events.schedule_at(t, Event::Wake);
        }
        while self.events.peek_due().is_some_and(|d| d <= t) {
            self.step()?;
        }
        Ok(())
    }

    /// Runs until every submitted application and started thread is terminal
    /// at the client.
    pub fn run_until_client_idle(&mut self) -> Result<Millis, SimError> {
        self.run_until(|c| c.client.is_idle())
    }

    /// Deploys the package and waits until every worker is registered.
    pub fn deploy(&mut self) -> Result<Millis, SimError> {
        let now = self.now();
        let package = self.pool.package_and_upload(&mut self.storage, now)?;
        let mut layout = match self.spec.mode {
            DeploymentMode::WorkerDeployment => DeploymentLayout::worker_mode(),
            DeploymentMode::CloudDeployment => DeploymentLayout::cloud_mode(),
        };
        layout.worker_size = self.spec.worker_size;
        let actions = self.pool.create_deployment(now, package, layout, self.spec.workers)?;
        self.trace.record(now, TraceKind::Provision, "pool", "-", None, format!("create {} workers", self.spec.workers));
        self.apply(actions);
        self.log_pool_changes();
        self.run_until(|c| c.is_ready())
    }

    /// Deployment running, proxy (if any) ready and every live worker Online.
    pub fn is_ready(&self) -> bool {
        if self.pool.state() != DeploymentState::Running {
            return false;
        }
        if self.roles.proxy.is_some() && !self.proxy.as_ref().is_some_and(|p| p.proxy.is_ready()) {
            return false;
        }
        let live: Vec<_> = self.workers.iter().filter(|(n, _)| self.net.is_running(**n)).collect();
        live.iter().all(|(_, w)| self.master.member(&w.node).is_some_and(|m| m.status == NodeStatus::Online))
            && self.pool.deployment().is_some_and(|d| d.live_workers().all(|i| i.started_at.is_some()))
    }

    // --- provisioning -------------------------------------------------------

    fn apply(&mut self, actions: Vec<PoolAction>) {
        for a in actions {
            match a {
                PoolAction::Boot { instance, due, .. } => self.events.schedule_at(due, Event::Boot { instance }),
                PoolAction::Stop { instance, .. } => self.stop_instance(instance, true),
                PoolAction::Teardown { due } => self.events.schedule_at(due, Event::Teardown),
            }
        }
        if let Some(d) = self.pool.deployment() {
            self.peak_workers = self.peak_workers.max(d.active_workers());
        }
    }

    fn log_pool_changes(&mut self) {
        let Some(d) = self.pool.deployment() else { return };
        for (t, s) in d.log.iter().skip(self.pool_log_seen) {
            self.trace.record(*t, TraceKind::DeploymentState, d.id.clone(), "-", None, s.to_string());
        }
        self.pool_log_seen = d.log.len();
    }

    fn on_boot(&mut self, instance: InstanceId) -> Result<(), SimError> {
        let now = self.now();
        let Some(rec) = self.pool.deployment().and_then(|d| d.instance(instance)).cloned() else { return Ok(()) };
        if !self.pool.instance_started(now, instance) {
            return Ok(());
        }
        let node = match rec.role {
            InstanceRole::Master => {
                let role = self.roles.master.expect("cloud layout declares the master role");
                let node = self.net.start_instance(role, Region::Cloud)?;
                let internal = self.net.node(node).and_then(|n| n.endpoint_addr(CONTROL)).expect("declared");
                self.master.uri = NodeUri::direct(internal.host, internal.port);
                self.master_node = Some(node);
                node
            }
            InstanceRole::Proxy => {
                let role = self.roles.proxy.expect("worker layout declares the proxy role");
                let node = self.net.start_instance(role, Region::Cloud)?;
                self.proxy = Some(ProxyInstance { node, proxy: MessageProxy::new(self.spec.key.clone()) });
                self.events.schedule_in(self.spec.proxy_ready_delay, Event::ProxyReady);
                node
            }
            InstanceRole::Worker => {
                let node = self.net.start_instance(self.roles.worker, Region::Cloud)?;
                let internal = self.net.node(node).and_then(|n| n.endpoint_addr(CONTROL)).expect("declared");
                let uri = match &self.front {
                    Some(front) => NodeUri::via_proxy(front, internal),
                    None => NodeUri::direct(internal.host, internal.port),
                };
                let mut w = Worker::new(uri, self.master.uri.clone(), rec.size, Region::Cloud);
                w.heartbeat_enabled = true;
                self.workers.insert(node, w);
                let barrier = self.roles.proxy.is_some() && !self.proxy.as_ref().is_some_and(|p| p.proxy.is_ready());
                if !barrier {
                    self.start_heartbeats(node);
                }
                node
            }
        };
        self.instance_nodes.insert(instance, node);
        self.node_instances.insert(node, instance);
        let label = self.net.label(node).to_string();
        let dep = self.deployment_id();
        self.master.record_instance_start(&dep, &label, rec.size, now);
        self.trace.record(now, TraceKind::InstanceStart, label, "-", None, format!("{} {}", rec.role.name(), rec.size));
        Ok(())
    }

    fn start_heartbeats(&mut self, node: NodeId) {
        if self.heartbeating.insert(node) {
            self.events.schedule_in(0, Event::Heartbeat { node });
        }
    }

    fn on_proxy_ready(&mut self) {
        let now = self.now();
        let Some(p) = self.proxy.as_mut() else { return };
        let node = p.node;
        if !self.net.is_running(node) {
            return;
        }
        let released = p.proxy.mark_ready();
        self.trace.record(now, TraceKind::ProxyReady, self.net.label(node).to_string(), "-", None, "");
        for a in released {
            self.proxy_action(node, a);
        }
        let nodes: Vec<_> = self.workers.keys().copied().collect();
        for n in nodes {
            if self.net.is_running(n) {
                self.start_heartbeats(n);
            }
        }
    }

    fn stop_instance(&mut self, instance: InstanceId, notify_master: bool) {
        let now = self.now();
        let Some(&node) = self.instance_nodes.get(&instance) else { return };
        if !self.net.is_running(node) {
            return;
        }
        self.net.stop_node(node);
        let label = self.net.label(node).to_string();
        self.master.record_instance_stop(&label, now);
        self.trace.record(now, TraceKind::InstanceStop, label, "-", None, "");
        if let Some(w) = self.workers.get_mut(&node) {
            w.halt();
            let uri = w.node.clone();
            if notify_master {
                let outs = self.master.release_node(now, &uri);
                self.send_from_master(outs);
            }
        }
    }

    fn busy_instances(&self) -> BTreeSet<InstanceId> {
        self.workers
            .iter()
            .filter(|(_, w)| w.is_busy() || self.master.member(&w.node).is_some_and(|m| m.busy))
            .filter_map(|(n, _)| self.node_instances.get(n).copied())
            .collect()
    }

    fn autoscale(&mut self) -> Result<(), SimError> {
        let Some(algorithm) = self.spec.autoscale else { return Ok(()) };
        if self.pool.state() != DeploymentState::Running {
            return Ok(());
        }
        let now = self.now();
        let d = self.pool.deployment().expect("running deployment");
        let active = d.active_workers();
        let capacity = self.pool.config().capacity;
        let requested = match algorithm {
            Algorithm::FixedQueue { queue_per_worker } => {
                decide_fixed_queue(self.master.queue_len() as u64, active, capacity, queue_per_worker).requested
            }
            Algorithm::DeadlinePriority { deadline } => {
                let remaining = self.master.remaining_cost();
                match decide_deadline_priority(now, remaining, deadline, self.spec.worker_size.throughput_milli(), active, capacity) {
                    Ok(r) => r.requested,
                    // Past the deadline: everything available.
                    Err(_) if remaining > 0 => capacity.saturating_sub(active),
                    Err(_) => 0,
                }
            }
        };
        if requested > 0 {
            let actions = self.pool.change_instance_count(now, active + requested, |_| false)?;
            self.trace.record(now, TraceKind::Provision, "pool", "-", None, format!("scale out {active} -> {}", active + requested));
            self.apply(actions);
            return Ok(());
        }
        let floor = self.spec.workers.max(1);
        if self.master.queue_len() == 0 && active > floor {
            let busy = self.busy_instances();
            let idle = d.live_workers().filter(|i| !busy.contains(&i.id)).count() as u32;
            let target = floor.max(active - idle);
            if target < active {
                let actions = self.pool.change_instance_count(now, target, |id| busy.contains(&id))?;
                self.trace.record(now, TraceKind::Provision, "pool", "-", None, format!("scale in {active} -> {target}"));
                self.apply(actions);
            }
        }
        Ok(())
    }

    /// Sets the worker count by hand.
    pub fn scale(&mut self, count: u32) -> Result<(), SimError> {
        let now = self.now();
        let busy = self.busy_instances();
        let actions = self.pool.change_instance_count(now, count, |id| busy.contains(&id))?;
        self.trace.record(now, TraceKind::Provision, "pool", "-", None, format!("scale to {count}"));
        self.apply(actions);
        self.log_pool_changes();
        Ok(())
    }

    pub fn delete(&mut self) -> Result<(), SimError> {
        let actions = self.pool.delete_deployment(self.now())?;
        self.apply(actions);
        self.log_pool_changes();
        Ok(())
    }

    /// Pauses the deployment: heartbeats stop and running units go back to the queue.
    pub fn suspend(&mut self) -> Result<(), SimError> {
        let now = self.now();
        self.pool.suspend(now)?;
        let nodes: Vec<_> = self.workers.keys().copied().collect();
        for n in nodes {
            let w = self.workers.get_mut(&n).expect("listed");
            w.paused = true;
            w.halt();
            let uri = w.node.clone();
            let outs = self.master.release_node(now, &uri);
            self.send_from_master(outs);
        }
        self.log_pool_changes();
        Ok(())
    }

    pub fn resume(&mut self) -> Result<(), SimError> {
        self.pool.resume(self.now())?;
        for w in self.workers.values_mut() {
            w.paused = false;
        }
        self.log_pool_changes();
        Ok(())
    }

    // --- faults -------------------------------------------------------------

    /// Stops a worker without telling anyone; the master notices by silence.
    pub fn kill_worker(&mut self, node: NodeId) -> Result<(), SimError> {
        if !self.workers.contains_key(&node) || !self.net.is_running(node) {
            return Err(SimError::NotAWorker(node));
        }
        let now = self.now();
        self.trace.record(now, TraceKind::Fault, self.net.label(node).to_string(), "-", None, "kill");
        if let Some(&i) = self.node_instances.get(&node) {
            self.pool.instance_lost(now, i);
            self.stop_instance(i, false);
        }
        Ok(())
    }

    /// Silences a worker's heartbeats; it keeps executing.
    pub fn silence_worker(&mut self, node: NodeId) -> Result<(), SimError> {
        let w = self.workers.get_mut(&node).ok_or(SimError::NotAWorker(node))?;
        w.heartbeat_enabled = false;
        self.trace.record(self.events.now(), TraceKind::Fault, self.net.label(node).to_string(), "-", None, "silence");
        Ok(())
    }

    // --- client -------------------------------------------------------------

    pub fn new_task_app(&mut self) -> TaskApplication {
        self.client.new_task_app()
    }

    /// Uploads the application's inputs, then submits it.
    pub fn submit_tasks(&mut self, app: TaskApplication) -> Result<AppId, SimError> {
        let now = self.now();
        let (id, uploads, out) = self.client.submit_tasks(app)?;
        if !uploads.is_empty() {
            let pool = self.pool.config();
            let conn = self.storage.open_channel(&pool.storage_account_name, &pool.storage_container, now)?;
            for u in uploads {
                self.storage.upload_file(&conn, &u.blob, &u.data, now)?;
            }
            self.feed_notices();
        }
        self.send(self.client_node, out);
        Ok(id)
    }

    pub fn create_thread(&mut self, operation: &str, params: crate::work::Params, cost: u64) -> UnitId {
        self.client.create_thread(operation, params, cost)
    }

    pub fn start_threads(&mut self, ids: &[UnitId]) -> Result<(), SimError> {
        let out = self.client.start_threads(ids)?;
        self.send(self.client_node, out);
        Ok(())
    }

    pub fn start_thread(&mut self, id: UnitId) -> Result<(), SimError> {
        self.start_threads(&[id])
    }

    pub fn abort_thread(&mut self, id: UnitId) -> Result<(), SimError> {
        if let Some(out) = self.client.abort_thread(id)? {
            self.send(self.client_node, out);
        }
        Ok(())
    }

    /// Waits in virtual time until the thread is terminal.
    pub fn join_thread(&mut self, id: UnitId) -> Result<JoinOutcome, SimError> {
        loop {
            if let Some(outcome) = self.client.join_thread(id)? {
                return Ok(outcome);
            }
            if !self.step()? {
                return Err(SimError::Stalled(self.now()));
            }
        }
    }

    /// Starts one thread per tile; returns the thread ids in tile order.
    pub fn start_mandelbrot(&mut self, job: &MandelbrotJob) -> Result<Vec<UnitId>, SimError> {
        let threads = job.threads(0, &self.registry);
        let ids = self.client.adopt_threads(threads);
        self.start_threads(&ids)?;
        Ok(ids)
    }

    /// Fetches every output file of a finished application.
    pub fn download_outputs(&mut self, app: AppId) -> Result<LocalFiles, SimError> {
        let now = self.now();
        let pool = self.pool.config().clone();
        let conn = self.storage.open_channel(&pool.storage_account_name, &pool.storage_container, now)?;
        let mut files = LocalFiles::new();
        let Some(a) = self.master.app(app) else { return Ok(files) };
        let names: Vec<_> = a
            .units
            .iter()
            .flat_map(|u| u.output_files.iter().map(move |f| blob_name(app, u.id, FileRole::Output, &f.name)))
            .collect();
        for name in names {
            let d = self.storage.download_file(&conn, &name, now)?;
            files.insert(name, d.data);
        }
        self.feed_notices();
        Ok(files)
    }

    /// Sends a routing probe from the on-premises master to `target`.
    pub fn probe(&mut self, target: NodeUri) -> Result<(), SimError> {
        let from = match (self.spec.mode, self.master_node) {
            (DeploymentMode::WorkerDeployment, Some(n)) => n,
            _ => return Err(SimError::NoMaster(self.spec.mode)),
        };
        self.probes.sent += 1;
        self.send(from, Outgoing::new(target, Payload::ControlAck(Ack { unit: None, event: AckEvent::Ping })));
        Ok(())
    }

    // --- messaging ----------------------------------------------------------

    fn uri_of(&self, node: NodeId) -> NodeUri {
        if Some(node) == self.master_node {
            return self.master.uri.clone();
        }
        if node == self.client_node {
            return self.client.uri.clone();
        }
        if let Some(w) = self.workers.get(&node) {
            return w.node.clone();
        }
        match (&self.proxy, &self.front) {
            (Some(p), Some(front)) if p.node == node => NodeUri::direct(front.host.clone(), front.port),
            _ => NodeUri::direct(self.net.node(node).map_or("unknown", |n| n.host.as_str()), 0),
        }
    }

    fn send(&mut self, from: NodeId, out: Outgoing) {
        let msg = Message {
            id: MessageId(self.next_msg),
            source: self.uri_of(from),
            target: out.target,
            shared_key: self.spec.key.clone(),
            payload: out.payload,
            sent_at: self.now(),
        };
        self.next_msg += 1;
        let route = self.net.route_to(&msg.target.addr());
        self.transmit(from, msg, route);
    }

    fn send_from_master(&mut self, outs: Vec<Outgoing>) {
        if outs.is_empty() {
            return;
        }
        match self.master_node {
            Some(node) => {
                for o in outs {
                    self.send(node, o);
                }
            }
            None => {
                let now = self.now();
                for o in outs {
                    self.trace.record(now, TraceKind::Drop, "master", o.target.to_string(), None, "master not started");
                }
            }
        }
    }

    fn transmit(&mut self, from: NodeId, msg: Message, route: Route) {
        let now = self.now();
        let src = self.net.label(from).to_string();
        if !self.net.is_running(from) {
            self.trace.record(now, TraceKind::Drop, src, msg.target.to_string(), Some(msg.id), "sender stopped");
            return;
        }
        match self.net.send(now, from, &route) {
            Ok(d) => {
                self.trace.record(now, TraceKind::Send, src, self.net.label(d.to).to_string(), Some(msg.id), describe(&msg.payload));
                self.events.schedule_at(d.at, Event::Deliver { to: d.to, msg });
            }
            Err(e) => {
                self.trace.record(now, TraceKind::Unroutable, src, msg.target.to_string(), Some(msg.id), e.to_string());
            }
        }
    }

    fn deliver(&mut self, to: NodeId, msg: Message) {
        let now = self.now();
        let dst = self.net.label(to).to_string();
        if !self.net.is_running(to) {
            self.trace.record(now, TraceKind::Drop, msg.source.to_string(), dst, Some(msg.id), "receiver stopped");
            return;
        }
        self.trace.record(now, TraceKind::Deliver, msg.source.to_string(), dst, Some(msg.id), describe(&msg.payload));
        if Some(to) == self.master_node {
            self.master_receive(msg);
        } else if to == self.client_node {
            self.client.handle(now, &msg.payload);
        } else if self.proxy.as_ref().is_some_and(|p| p.node == to) {
            let action = self.proxy.as_mut().expect("checked").proxy.on_external_message(msg);
            self.proxy_action(to, action);
        } else if self.workers.contains_key(&to) {
            self.worker_receive(to, msg);
        }
    }

    fn master_receive(&mut self, msg: Message) {
        let now = self.now();
        let (id, src) = (msg.id, msg.source.to_string());
        match self.master.handle(now, msg) {
            Ok(outs) => self.send_from_master(outs),
            Err(MasterError::AuthFailure(_)) => {
                self.trace.record(now, TraceKind::AuthDrop, src, "master", Some(id), "shared key mismatch");
            }
            // Recorded from the master's event log.
            Err(MasterError::StaleResult { .. }) => {}
            Err(e) => self.trace.record(now, TraceKind::Drop, src, "master", Some(id), e.to_string()),
        }
    }

    fn proxy_action(&mut self, proxy: NodeId, action: ProxyAction) {
        let now = self.now();
        let label = self.net.label(proxy).to_string();
        match action {
            ProxyAction::Forward { msg, to } => {
                self.trace.record(now, TraceKind::Forward, label, to.to_string(), Some(msg.id), "");
                self.transmit(proxy, msg, Route::Direct(to));
            }
            ProxyAction::Nak { error, reply } => {
                self.trace.record(now, TraceKind::ProxyNak, label, reply.target.to_string(), None, error.to_string());
                self.send(proxy, reply);
            }
            ProxyAction::Drop { error, msg } => {
                self.trace.record(now, TraceKind::AuthDrop, label, msg.source.to_string(), Some(msg.id), error.to_string());
            }
            ProxyAction::Buffered => {
                self.trace.record(now, TraceKind::Buffer, label, "-", None, "");
            }
        }
    }

    fn worker_receive(&mut self, node: NodeId, msg: Message) {
        let now = self.now();
        let label = self.net.label(node).to_string();
        let w = self.workers.get_mut(&node).expect("checked by caller");
        if msg.target != w.node {
            self.trace.record(now, TraceKind::Misdeliver, msg.source.to_string(), label, Some(msg.id), msg.target.to_string());
            if matches!(msg.payload, Payload::ControlAck(Ack { event: AckEvent::Ping, .. })) {
                self.probes.misdelivered += 1;
            }
            return;
        }
        if !authenticate(&msg, &self.spec.key) {
            self.trace.record(now, TraceKind::AuthDrop, msg.source.to_string(), label, Some(msg.id), "shared key mismatch");
            return;
        }
        let pool = self.pool.config();
        let files = FileAccess {
            storage: &mut self.storage,
            account: &pool.storage_account_name,
            container: &pool.storage_container,
        };
        let out = match msg.payload {
            Payload::SubmitWorkUnit(unit) => {
                let id = unit.id;
                match w.on_submit(now, *unit, &self.registry, Some(files)) {
                    SubmitOutcome::Started { token, due, ack } => {
                        self.trace.record(now, TraceKind::UnitStart, label, "-", None, id.to_string());
                        self.events.schedule_at(due, Event::Complete { node, token });
                        Some(ack)
                    }
                    SubmitOutcome::Bounced { error, reply } | SubmitOutcome::Rejected { error, reply } => {
                        self.trace.record(now, TraceKind::Drop, label, "-", Some(msg.id), error.to_string());
                        Some(reply)
                    }
                }
            }
            Payload::AbortWorkUnit { unit, .. } => match w.abort(now, unit) {
                Ok(out) => {
                    self.trace.record(now, TraceKind::UnitAbort, label, "-", None, unit.to_string());
                    Some(out)
                }
                Err(_) => Some(Outgoing::new(
                    w.master.clone(),
                    Payload::ControlAck(Ack { unit: Some(unit), event: AckEvent::NotRunningHere }),
                )),
            },
            Payload::ControlAck(Ack { event: AckEvent::Ping, .. }) => {
                self.probes.delivered += 1;
                None
            }
            other => {
                self.trace.record(now, TraceKind::Drop, label, "-", Some(msg.id), format!("unexpected {}", other.kind()));
                None
            }
        };
        if let Some(o) = out {
            self.send(node, o);
        }
    }

    fn on_heartbeat_tick(&mut self, node: NodeId) {
        if !self.net.is_running(node) {
            self.heartbeating.remove(&node);
            return;
        }
        if let Some(out) = self.workers.get(&node).and_then(|w| w.heartbeat()) {
            self.send(node, out);
        }
        self.events.schedule_in(self.spec.master.heartbeat_interval, Event::Heartbeat { node });
    }

    fn on_complete(&mut self, node: NodeId, token: u64) {
        if !self.net.is_running(node) {
            return;
        }
        let now = self.now();
        let pool = self.pool.config();
        let Some(w) = self.workers.get_mut(&node) else { return };
        let files = FileAccess {
            storage: &mut self.storage,
            account: &pool.storage_account_name,
            container: &pool.storage_container,
        };
        if let Some((_, out)) = w.complete(now, token, &self.registry, Some(files)) {
            self.send(node, out);
        }
    }

    /// Hands queued storage notices to the master.
    fn feed_notices(&mut self) {
        let container = self.pool.config().storage_container.clone();
        let notices = self.storage.drain_notices(&container);
        let now = self.now();
        for n in notices {
            self.trace.record(n.at, TraceKind::Notice, "storage", "master", None, n.to_string());
            let outs = self.master.on_file_notice(now, &n);
            self.send_from_master(outs);
        }
    }

    fn drain_master_events(&mut self) {
        let now = self.now();
        for e in self.master.drain_events() {
            let (kind, subject, detail) = match e {
                MasterEvent::Joined { node } => (TraceKind::MemberState, node.to_string(), String::from("joined")),
                MasterEvent::Status { node, from, to } => (TraceKind::MemberState, node.to_string(), format!("{from} -> {to}")),
                MasterEvent::Scheduled { .. } | MasterEvent::Started { .. } => continue,
                MasterEvent::Finished { unit, node, state } => (TraceKind::UnitFinish, node.to_string(), format!("{unit} {state}")),
                MasterEvent::Requeued { unit, node, reason } => (
                    TraceKind::UnitRequeue,
                    node.map(|n| n.to_string()).unwrap_or_else(|| String::from("-")),
                    format!("{unit} {reason}"),
                ),
                MasterEvent::Aborted { unit } => (TraceKind::UnitAbort, String::from("-"), unit.to_string()),
                MasterEvent::Stale { unit, from } => (TraceKind::StaleResult, from.to_string(), unit.to_string()),
                MasterEvent::AppSubmitted { app, units } => (TraceKind::AppSubmitted, String::from("-"), format!("{app} {units} units")),
                MasterEvent::AppFinished { app, state } => (TraceKind::AppFinished, String::from("-"), format!("{app} {state}")),
                MasterEvent::InputStaged { file } => (TraceKind::Notice, String::from("-"), format!("staged {file}")),
            };
            self.trace.record(now, kind, "master", subject, None, detail);
        }
    }
}

fn describe(p: &Payload) -> String {
    match p {
        Payload::Heartbeat(h) => format!("Heartbeat {}", if h.busy { "busy" } else { "idle" }),
        Payload::SubmitWorkUnit(u) => format!("SubmitWorkUnit {}", u.id),
        Payload::WorkUnitResult(r) => format!("WorkUnitResult {} {:?}", r.unit, r.outcome),
        Payload::ControlAck(a) => match a.unit {
            Some(u) => format!("ControlAck {:?} {u}", a.event),
            None => format!("ControlAck {:?}", a.event),
        },
        Payload::FileNotification(n) => format!("FileNotification {n}"),
        Payload::ProxyNak { rejected } => format!("ProxyNak {rejected}"),
        Payload::SubmitApplication(a) => format!("SubmitApplication {} {} units", a.id, a.units.len()),
        Payload::AbortWorkUnit { unit, .. } => format!("AbortWorkUnit {unit}"),
        Payload::ApplicationResult(r) => format!("ApplicationResult {} {}", r.app, r.state),
    }
}
