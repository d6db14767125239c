//! Deterministic discrete-event network.
//!
//! Roles declare up to five endpoints. Every input endpoint sits behind a
//! round-robin [`LoadBalancer`]; internal endpoints are reachable only by exact
//! address. Instances get ports from a seeded generator, so two runs with the
//! same seed assign identical ports.

use crate::clock::{Millis, VirtualClock};
use crate::message::MessageId;
use crate::uri::EndpointAddr;
use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};
use core::fmt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// A worker role may declare at most this many endpoints.
pub const MAX_ENDPOINTS_PER_ROLE: usize = 5;
pub const PORT_RANGE: core::ops::RangeInclusive<u16> = 20_000..=65_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NetError {
    #[error("role `{role}` declares {count} endpoints, at most {MAX_ENDPOINTS_PER_ROLE} allowed")]
    EndpointLimitExceeded { role: String, count: usize },
    #[error("role `{0}` is already declared")]
    DuplicateRole(String),
    #[error("input endpoint `{0}` needs a public port")]
    MissingPublicPort(String),
    #[error("address {0} is already bound")]
    AddressInUse(EndpointAddr),
    #[error("role handle {0} was never declared")]
    UndeclaredRole(usize),
    #[error("no route to {0}")]
    Unroutable(EndpointAddr),
    #[error("load balancer {0} has no backends")]
    EmptyBackendSet(EndpointAddr),
    #[error("next event at {next} ms is past the horizon {horizon} ms")]
    HorizonExceeded { horizon: Millis, next: Millis },
    #[error("invalid latency profile: lan {lan_ms} ms, wan {wan_ms} ms")]
    InvalidLatencyProfile { lan_ms: Millis, wan_ms: Millis },
    #[error("port range exhausted")]
    PortsExhausted,
}

/// Datacenter label; LAN latency applies iff two nodes share a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    OnPrem,
    Cloud,
}

impl Region {
    pub fn label(self) -> &'static str {
        match self {
            Region::OnPrem => "onprem",
            Region::Cloud => "cloud",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyProfile {
    lan_ms: Millis,
    wan_ms: Millis,
}

impl LatencyProfile {
    pub fn new(lan_ms: Millis, wan_ms: Millis) -> Result<Self, NetError> {
        if lan_ms > wan_ms {
            return Err(NetError::InvalidLatencyProfile { lan_ms, wan_ms });
        }
        Ok(Self { lan_ms, wan_ms })
    }

    pub fn zero() -> Self {
        Self { lan_ms: 0, wan_ms: 0 }
    }

    pub fn lan_ms(&self) -> Millis {
        self.lan_ms
    }

    pub fn wan_ms(&self) -> Millis {
        self.wan_ms
    }

    pub fn between(&self, a: Region, b: Region) -> Millis {
        if a == b {
            self.lan_ms
        } else {
            self.wan_ms
        }
    }
}

impl Default for LatencyProfile {
    fn default() -> Self {
        Self { lan_ms: 1, wan_ms: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EndpointKind {
    Input,
    Internal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    Tcp,
}

/// Declared endpoint of a role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndpointSpec {
    pub name: String,
    pub kind: EndpointKind,
    pub protocol: Protocol,
    /// Load-balancer port for input endpoints.
    pub public_port: Option<u16>,
}

impl EndpointSpec {
    pub fn input(name: impl Into<String>, public_port: u16) -> Self {
        Self { name: name.into(), kind: EndpointKind::Input, protocol: Protocol::Tcp, public_port: Some(public_port) }
    }

    pub fn internal(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: EndpointKind::Internal, protocol: Protocol::Tcp, public_port: None }
    }
}

/// An endpoint bound on a running instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endpoint {
    pub role_name: String,
    pub name: String,
    pub kind: EndpointKind,
    pub protocol: Protocol,
    /// Port the instance listens on (assigned at start).
    pub port: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RoleHandle(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Strict round robin over an ordered backend list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadBalancer {
    pub addr: EndpointAddr,
    backends: Vec<NodeId>,
    cursor: usize,
}

impl LoadBalancer {
    pub fn new(addr: EndpointAddr) -> Self {
        Self { addr, backends: Vec::new(), cursor: 0 }
    }

    pub fn backends(&self) -> &[NodeId] {
        &self.backends
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn add(&mut self, node: NodeId) {
        if !self.backends.contains(&node) {
            self.backends.push(node);
        }
    }

    pub fn remove(&mut self, node: NodeId) {
        if let Some(i) = self.backends.iter().position(|&b| b == node) {
            self.backends.remove(i);
            if i < self.cursor {
                self.cursor -= 1;
            }
            if self.cursor >= self.backends.len() {
                self.cursor = 0;
            }
        }
    }

    pub fn next_backend(&mut self) -> Result<NodeId, NetError> {
        if self.backends.is_empty() {
            return Err(NetError::EmptyBackendSet(self.addr.clone()));
        }
        let node = self.backends[self.cursor];
        self.cursor = (self.cursor + 1) % self.backends.len();
        Ok(node)
    }
}

// ---------------------------------------------------------------------------
// Event queue

struct Entry<E> {
    due: Millis,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.due == other.due && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.due, self.seq).cmp(&(other.due, other.seq))
    }
}

/// Pending events ordered by `(due, insertion sequence)`.
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<Entry<E>>>,
    seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self { heap: BinaryHeap::new(), seq: 0 }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, due: Millis, event: E) {
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Reverse(Entry { due, seq, event }));
    }

    pub fn pop(&mut self) -> Option<(Millis, E)> {
        self.heap.pop().map(|Reverse(e)| (e.due, e.event))
    }

    pub fn peek_due(&self) -> Option<Millis> {
        self.heap.peek().map(|Reverse(e)| e.due)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Clock plus queue. Events are never scheduled in the past.
pub struct EventLoop<E> {
    clock: VirtualClock,
    queue: EventQueue<E>,
    horizon: Millis,
}

impl<E> EventLoop<E> {
    pub fn new(horizon: Millis) -> Self {
        Self { clock: VirtualClock::new(), queue: EventQueue::new(), horizon }
    }

    pub fn now(&self) -> Millis {
        self.clock.now()
    }

    pub fn horizon(&self) -> Millis {
        self.horizon
    }

    pub fn set_horizon(&mut self, horizon: Millis) {
        self.horizon = horizon;
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule_at(&mut self, due: Millis, event: E) {
        self.queue.push(due.max(self.clock.now()), event);
    }

    pub fn schedule_in(&mut self, delay: Millis, event: E) {
        self.queue.push(self.clock.now() + delay, event);
    }

    pub fn peek_due(&self) -> Option<Millis> {
        self.queue.peek_due()
    }

    /// Pops the next event and advances the clock to it.
    pub fn step(&mut self) -> Result<Option<(Millis, E)>, NetError> {
        match self.queue.peek_due() {
            None => Ok(None),
            Some(next) if next > self.horizon => Err(NetError::HorizonExceeded { horizon: self.horizon, next }),
            Some(_) => {
                let (due, ev) = self.queue.pop().expect("peeked");
                self.clock.advance_to(due);
                Ok(Some((due, ev)))
            }
        }
    }

    /// Runs `handler` on every event until the queue is empty.
    pub fn run_until_idle<F>(&mut self, mut handler: F) -> Result<Millis, NetError>
    where
        F: FnMut(&mut Self, Millis, E),
    {
        while let Some((t, ev)) = self.step()? {
            handler(self, t, ev);
        }
        Ok(self.clock.now())
    }
}

// ---------------------------------------------------------------------------
// Trace

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TraceKind {
    Send,
    Deliver,
    Drop,
    Misdeliver,
    Unroutable,
    AuthDrop,
    Forward,
    Buffer,
    ProxyReady,
    ProxyNak,
    UnitStart,
    UnitFinish,
    UnitRequeue,
    UnitAbort,
    StaleResult,
    MemberState,
    AppSubmitted,
    AppFinished,
    InstanceStart,
    InstanceStop,
    DeploymentState,
    Provision,
    Notice,
    Fault,
}

impl TraceKind {
    pub fn name(self) -> &'static str {
        match self {
            TraceKind::Send => "send",
            TraceKind::Deliver => "deliver",
            TraceKind::Drop => "drop",
            TraceKind::Misdeliver => "misdeliver",
            TraceKind::Unroutable => "unroutable",
            TraceKind::AuthDrop => "auth_drop",
            TraceKind::Forward => "forward",
            TraceKind::Buffer => "buffer",
            TraceKind::ProxyReady => "proxy_ready",
            TraceKind::ProxyNak => "proxy_nak",
            TraceKind::UnitStart => "unit_start",
            TraceKind::UnitFinish => "unit_finish",
            TraceKind::UnitRequeue => "unit_requeue",
            TraceKind::UnitAbort => "unit_abort",
            TraceKind::StaleResult => "stale_result",
            TraceKind::MemberState => "member_state",
            TraceKind::AppSubmitted => "app_submitted",
            TraceKind::AppFinished => "app_finished",
            TraceKind::InstanceStart => "instance_start",
            TraceKind::InstanceStop => "instance_stop",
            TraceKind::DeploymentState => "deployment_state",
            TraceKind::Provision => "provision",
            TraceKind::Notice => "notice",
            TraceKind::Fault => "fault",
        }
    }
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One line of the replayable event trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: Millis,
    pub kind: TraceKind,
    pub source: String,
    pub destination: String,
    pub message: Option<MessageId>,
    pub detail: String,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}\t", self.time, self.kind, self.source, self.destination)?;
        match self.message {
            Some(id) => write!(f, "{id}")?,
            None => f.write_str("-")?,
        }
        write!(f, "\t{}", self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn record(
        &mut self,
        time: Millis,
        kind: TraceKind,
        source: impl Into<String>,
        destination: impl Into<String>,
        message: Option<MessageId>,
        detail: impl Into<String>,
    ) {
        self.records.push(TraceRecord {
            time,
            kind,
            source: source.into(),
            destination: destination.into(),
            message,
            detail: detail.into(),
        });
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn of_kind(&self, kind: TraceKind) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    /// SHA-256 over the line-delimited rendering.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update(format!("{r}\n").as_bytes());
        }
        h.finalize().into()
    }
}

// ---------------------------------------------------------------------------
// Network

#[derive(Debug, Clone)]
struct Role {
    name: String,
    public_host: String,
    endpoints: Vec<EndpointSpec>,
    /// Balancer index per declared endpoint (input endpoints only).
    balancers: Vec<Option<usize>>,
    started: u32,
}

/// Where an address leads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddressTarget {
    Balancer(usize),
    Node(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRecord {
    pub id: NodeId,
    pub label: String,
    pub role: Option<RoleHandle>,
    pub region: Region,
    pub host: String,
    pub endpoints: Vec<Endpoint>,
    pub running: bool,
}

impl NodeRecord {
    /// Address of the first endpoint with the given name.
    pub fn endpoint_addr(&self, name: &str) -> Option<EndpointAddr> {
        self.endpoints.iter().find(|e| e.name == name).map(|e| EndpointAddr::new(self.host.clone(), e.port))
    }
}

/// How a message leaves its sender.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Route {
    /// Through the load balancer listening on the address.
    InputEndpoint(EndpointAddr),
    /// Straight to the instance bound on the address.
    Direct(EndpointAddr),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub to: NodeId,
    pub at: Millis,
    pub latency: Millis,
}

pub struct Network {
    rng: ChaCha8Rng,
    profile: LatencyProfile,
    roles: Vec<Role>,
    balancers: Vec<LoadBalancer>,
    nodes: BTreeMap<NodeId, NodeRecord>,
    index: BTreeMap<EndpointAddr, AddressTarget>,
    used_ports: BTreeSet<u16>,
    next_node: u32,
    next_ip: u32,
}

impl Network {
    pub fn new(seed: u64, profile: LatencyProfile) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            profile,
            roles: Vec::new(),
            balancers: Vec::new(),
            nodes: BTreeMap::new(),
            index: BTreeMap::new(),
            used_ports: BTreeSet::new(),
            next_node: 0,
            next_ip: 4,
        }
    }

    pub fn profile(&self) -> LatencyProfile {
        self.profile
    }

    /// Registers a role; each input endpoint gets a balancer on `public_host`.
    pub fn declare_role(
        &mut self,
        name: impl Into<String>,
        public_host: impl Into<String>,
        endpoints: Vec<EndpointSpec>,
    ) -> Result<RoleHandle, NetError> {
        let name = name.into();
        let public_host = public_host.into();
        if endpoints.len() > MAX_ENDPOINTS_PER_ROLE {
            return Err(NetError::EndpointLimitExceeded { role: name, count: endpoints.len() });
        }
        if self.roles.iter().any(|r| r.name == name) {
            return Err(NetError::DuplicateRole(name));
        }
        let mut balancers = Vec::with_capacity(endpoints.len());
        let mut pending = Vec::new();
        for ep in &endpoints {
            match ep.kind {
                EndpointKind::Input => {
                    let port = ep.public_port.ok_or_else(|| NetError::MissingPublicPort(ep.name.clone()))?;
                    let addr = EndpointAddr::new(public_host.clone(), port);
                    if self.index.contains_key(&addr) || pending.contains(&addr) {
                        return Err(NetError::AddressInUse(addr));
                    }
                    pending.push(addr);
                    balancers.push(Some(self.balancers.len() + pending.len() - 1));
                }
                EndpointKind::Internal => balancers.push(None),
            }
        }
        for addr in pending {
            let idx = self.balancers.len();
            self.index.insert(addr.clone(), AddressTarget::Balancer(idx));
            self.balancers.push(LoadBalancer::new(addr));
        }
        self.roles.push(Role { name, public_host, endpoints, balancers, started: 0 });
        Ok(RoleHandle(self.roles.len() - 1))
    }

    pub fn role_name(&self, role: RoleHandle) -> Option<&str> {
        self.roles.get(role.0).map(|r| r.name.as_str())
    }

    /// Public address of a role's input endpoint.
    pub fn role_input_addr(&self, role: RoleHandle, endpoint: &str) -> Option<EndpointAddr> {
        let r = self.roles.get(role.0)?;
        r.endpoints
            .iter()
            .find(|e| e.name == endpoint && e.kind == EndpointKind::Input)
            .and_then(|e| e.public_port)
            .map(|p| EndpointAddr::new(r.public_host.clone(), p))
    }

    fn fresh_port(&mut self) -> Result<u16, NetError> {
        if self.used_ports.len() >= PORT_RANGE.len() {
            return Err(NetError::PortsExhausted);
        }
        loop {
            let p = self.rng.gen_range(PORT_RANGE);
            if self.used_ports.insert(p) {
                return Ok(p);
            }
        }
    }

    /// Starts an instance of a declared role with freshly drawn ports and
    /// registers it behind each of the role's balancers.
    pub fn start_instance(&mut self, role: RoleHandle, region: Region) -> Result<NodeId, NetError> {
        let specs = self.roles.get(role.0).ok_or(NetError::UndeclaredRole(role.0))?.endpoints.clone();
        let mut endpoints = Vec::with_capacity(specs.len());
        for spec in &specs {
            let port = self.fresh_port()?;
            endpoints.push(Endpoint {
                role_name: self.roles[role.0].name.clone(),
                name: spec.name.clone(),
                kind: spec.kind,
                protocol: spec.protocol,
                port,
            });
        }
        let n = self.next_ip;
        self.next_ip += 1;
        let host = format!("10.0.{}.{}", n / 256, n % 256);
        let id = NodeId(self.next_node);
        self.next_node += 1;

        let r = &mut self.roles[role.0];
        let label = format!("{}_IN_{}", r.name, r.started);
        r.started += 1;
        for (ep, lb) in endpoints.iter().zip(r.balancers.clone()) {
            self.index.insert(EndpointAddr::new(host.clone(), ep.port), AddressTarget::Node(id));
            if let Some(lb) = lb {
                self.balancers[lb].add(id);
            }
        }
        self.nodes.insert(id, NodeRecord { id, label, role: Some(role), region, host, endpoints, running: true });
        Ok(id)
    }

    /// Adds a node outside any role (on-premises machine or external client).
    pub fn add_external_node(&mut self, label: impl Into<String>, addr: EndpointAddr, region: Region) -> Result<NodeId, NetError> {
        if self.index.contains_key(&addr) {
            return Err(NetError::AddressInUse(addr));
        }
        let id = NodeId(self.next_node);
        self.next_node += 1;
        self.index.insert(addr.clone(), AddressTarget::Node(id));
        self.nodes.insert(
            id,
            NodeRecord {
                id,
                label: label.into(),
                role: None,
                region,
                host: addr.host.clone(),
                endpoints: alloc::vec![Endpoint {
                    role_name: String::new(),
                    name: "external".to_string(),
                    kind: EndpointKind::Internal,
                    protocol: Protocol::Tcp,
                    port: addr.port,
                }],
                running: true,
            },
        );
        Ok(id)
    }

    /// Unbinds every address of the node and pulls it from its balancers.
    pub fn stop_node(&mut self, id: NodeId) {
        let Some(rec) = self.nodes.get_mut(&id) else { return };
        if !rec.running {
            return;
        }
        rec.running = false;
        for ep in &rec.endpoints {
            self.index.remove(&EndpointAddr::new(rec.host.clone(), ep.port));
        }
        for lb in &mut self.balancers {
            lb.remove(id);
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeRecord> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.values()
    }

    pub fn label(&self, id: NodeId) -> &str {
        self.nodes.get(&id).map(|n| n.label.as_str()).unwrap_or("?")
    }

    pub fn is_running(&self, id: NodeId) -> bool {
        self.nodes.get(&id).is_some_and(|n| n.running)
    }

    pub fn lookup(&self, addr: &EndpointAddr) -> Option<AddressTarget> {
        self.index.get(addr).copied()
    }

    pub fn balancer(&self, idx: usize) -> Option<&LoadBalancer> {
        self.balancers.get(idx)
    }

    /// Natural route for an address: through the balancer if one listens there.
    pub fn route_to(&self, addr: &EndpointAddr) -> Route {
        match self.index.get(addr) {
            Some(AddressTarget::Balancer(_)) => Route::InputEndpoint(addr.clone()),
            _ => Route::Direct(addr.clone()),
        }
    }

    /// Resolves the receiving instance and the delivery time for a message
    /// leaving `from` at `now`.
    pub fn send(&mut self, now: Millis, from: NodeId, route: &Route) -> Result<Delivery, NetError> {
        let to = match route {
            Route::InputEndpoint(addr) => match self.index.get(addr) {
                Some(AddressTarget::Balancer(i)) => self.balancers[*i].next_backend()?,
                _ => return Err(NetError::Unroutable(addr.clone())),
            },
            Route::Direct(addr) => match self.index.get(addr) {
                Some(AddressTarget::Node(id)) => *id,
                _ => return Err(NetError::Unroutable(addr.clone())),
            },
        };
        let from_region = self.nodes.get(&from).map(|n| n.region).unwrap_or(Region::OnPrem);
        let to_region = self.nodes[&to].region;
        let latency = self.profile.between(from_region, to_region);
        Ok(Delivery { to, at: now + latency, latency })
    }
}
