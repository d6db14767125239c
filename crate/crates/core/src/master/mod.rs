//! The master container: membership, scheduling, result collection and
//! accounting.
//!
//! Scheduling is FIFO-to-idle-worker with one unit in flight per worker.
//! Idle workers are served in the order they became idle, so equal-cost units
//! spread evenly over identical workers.

pub mod accounting;

pub use accounting::{billed_hours, AccountingReport, BillingRecord, PricingTable, UsageLedger, UsageSpan};

use crate::clock::Millis;
use crate::instance::InstanceSize;
use crate::message::{
    authenticate, Ack, AckEvent, AppReport, HeartbeatInfo, Message, MessageKind, Outgoing, Payload, SharedKey,
    UnitOutcome, UnitReport,
};
use crate::storage::{blob_name, Direction, FileRole, Phase, TransferNotice};
use crate::uri::NodeUri;
use crate::work::{AppId, AppState, Application, Model, UnitId, UnitState, WorkUnit};
use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub const HEARTBEAT_INTERVAL: Millis = 1000;
pub const SUSPECT_INTERVALS: u64 = 3;
pub const DEAD_INTERVALS: u64 = 10;
pub const MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MasterConfig {
    pub heartbeat_interval: Millis,
    pub suspect_intervals: u64,
    pub dead_intervals: u64,
    /// Reschedules granted to a unit whose execution reported `Failed`.
    pub max_retries: u32,
    pub pricing: PricingTable,
}

impl Default for MasterConfig {
    fn default() -> Self {
        Self {
            heartbeat_interval: HEARTBEAT_INTERVAL,
            suspect_intervals: SUSPECT_INTERVALS,
            dead_intervals: DEAD_INTERVALS,
            max_retries: MAX_RETRIES,
            pricing: PricingTable::default(),
        }
    }
}

impl MasterConfig {
    pub fn suspect_timeout(&self) -> Millis {
        self.heartbeat_interval * self.suspect_intervals
    }

    pub fn dead_timeout(&self) -> Millis {
        self.heartbeat_interval * self.dead_intervals
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeStatus {
    Online,
    Suspect,
    Dead,
}

impl fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembershipEntry {
    pub node: NodeUri,
    pub size: InstanceSize,
    pub status: NodeStatus,
    pub last_heartbeat: Millis,
    /// Holds a unit, or bounced one and has not yet reported idle.
    pub busy: bool,
    pub executed_count: u64,
    pub joined_at: Millis,
    bounced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SchedulingPolicy {
    #[default]
    Fifo,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SchedulerState {
    pub ready_queue: VecDeque<UnitId>,
    pub inflight: BTreeMap<NodeUri, UnitId>,
    pub policy: SchedulingPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MasterError {
    #[error("message from {0} failed authentication")]
    AuthFailure(NodeUri),
    #[error("application {0} has no work units")]
    EmptyApplication(AppId),
    #[error("application {0} already submitted")]
    DuplicateApplication(AppId),
    #[error("work unit {0} already known")]
    DuplicateUnit(UnitId),
    #[error("unknown work unit {0}")]
    UnknownUnit(UnitId),
    #[error("stale result for {unit} from {from}")]
    StaleResult { unit: UnitId, from: NodeUri },
    #[error("master does not accept {0} messages")]
    Unexpected(MessageKind),
    #[error("units of task application {0} cannot be aborted")]
    TaskAbort(AppId),
}

/// Observable state changes, drained by the event loop into the trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MasterEvent {
    Joined { node: NodeUri },
    Status { node: NodeUri, from: NodeStatus, to: NodeStatus },
    Scheduled { unit: UnitId, node: NodeUri },
    Started { unit: UnitId, node: NodeUri },
    Finished { unit: UnitId, node: NodeUri, state: UnitState },
    Requeued { unit: UnitId, node: Option<NodeUri>, reason: &'static str },
    Aborted { unit: UnitId },
    Stale { unit: UnitId, from: NodeUri },
    AppSubmitted { app: AppId, units: usize },
    AppFinished { app: AppId, state: AppState },
    InputStaged { file: String },
}

/// Snapshot for status reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MasterStatus {
    pub online: usize,
    pub suspect: usize,
    pub dead: usize,
    pub queued: usize,
    pub inflight: usize,
    pub apps_active: usize,
    pub apps_finished: usize,
    pub apps_failed: usize,
    pub completed_units: u64,
}

#[derive(Debug, Clone)]
pub struct Master {
    pub uri: NodeUri,
    key: SharedKey,
    config: MasterConfig,
    members: BTreeMap<NodeUri, MembershipEntry>,
    idle: VecDeque<NodeUri>,
    sched: SchedulerState,
    apps: BTreeMap<AppId, Application>,
    units: BTreeMap<UnitId, (AppId, usize)>,
    clients: BTreeMap<AppId, NodeUri>,
    staged: BTreeSet<String>,
    abort_requested: BTreeSet<UnitId>,
    reported: BTreeSet<AppId>,
    completions: BTreeMap<UnitId, u32>,
    ledger: UsageLedger,
    events: Vec<MasterEvent>,
}

impl Master {
    pub fn new(uri: NodeUri, key: SharedKey, config: MasterConfig) -> Self {
        Self {
            uri,
            key,
            config,
            members: BTreeMap::new(),
            idle: VecDeque::new(),
            sched: SchedulerState::default(),
            apps: BTreeMap::new(),
            units: BTreeMap::new(),
            clients: BTreeMap::new(),
            staged: BTreeSet::new(),
            abort_requested: BTreeSet::new(),
            reported: BTreeSet::new(),
            completions: BTreeMap::new(),
            ledger: UsageLedger::new(),
            events: Vec::new(),
        }
    }

    pub fn config(&self) -> &MasterConfig {
        &self.config
    }

    // --- queries ------------------------------------------------------------

    pub fn members(&self) -> impl Iterator<Item = &MembershipEntry> {
        self.members.values()
    }

    pub fn member(&self, node: &NodeUri) -> Option<&MembershipEntry> {
        self.members.get(node)
    }

    pub fn online_count(&self) -> usize {
        self.members.values().filter(|m| m.status == NodeStatus::Online).count()
    }

    pub fn scheduler(&self) -> &SchedulerState {
        &self.sched
    }

    pub fn queue_len(&self) -> usize {
        self.sched.ready_queue.len()
    }

    pub fn app(&self, id: AppId) -> Option<&Application> {
        self.apps.get(&id)
    }

    pub fn apps(&self) -> impl Iterator<Item = &Application> {
        self.apps.values()
    }

    pub fn unit(&self, id: UnitId) -> Option<&WorkUnit> {
        let &(app, idx) = self.units.get(&id)?;
        self.apps.get(&app).map(|a| &a.units[idx])
    }

    /// Cost of every unit not yet terminal.
    pub fn remaining_cost(&self) -> u64 {
        self.apps.values().flat_map(|a| &a.units).filter(|u| !u.state.is_terminal()).map(|u| u.cost).sum()
    }

    /// Number of `Completed` transitions recorded for a unit.
    pub fn completions(&self, id: UnitId) -> u32 {
        self.completions.get(&id).copied().unwrap_or(0)
    }

    pub fn all_apps_terminal(&self) -> bool {
        self.apps.values().all(|a| a.all_terminal())
    }

    pub fn status(&self) -> MasterStatus {
        let mut s = MasterStatus {
            queued: self.sched.ready_queue.len(),
            inflight: self.sched.inflight.len(),
            completed_units: self.completions.values().map(|&c| c as u64).sum(),
            ..Default::default()
        };
        for m in self.members.values() {
            match m.status {
                NodeStatus::Online => s.online += 1,
                NodeStatus::Suspect => s.suspect += 1,
                NodeStatus::Dead => s.dead += 1,
            }
        }
        for a in self.apps.values() {
            match a.state {
                AppState::Finished => s.apps_finished += 1,
                AppState::Failed if a.all_terminal() => s.apps_failed += 1,
                _ => s.apps_active += 1,
            }
        }
        s
    }

    pub fn drain_events(&mut self) -> Vec<MasterEvent> {
        core::mem::take(&mut self.events)
    }

    /// First broken scheduler invariant, if any.
    pub fn invariant_violation(&self) -> Option<String> {
        let queued: BTreeSet<_> = self.sched.ready_queue.iter().copied().collect();
        if queued.len() != self.sched.ready_queue.len() {
            return Some(String::from("unit queued twice"));
        }
        let inflight: BTreeMap<_, _> = self.sched.inflight.iter().map(|(n, u)| (*u, n)).collect();
        if inflight.len() != self.sched.inflight.len() {
            return Some(String::from("unit in flight on two nodes"));
        }
        for u in self.apps.values().flat_map(|a| &a.units) {
            let (q, f, t) = (queued.contains(&u.id), inflight.contains_key(&u.id), u.state.is_terminal());
            if [q, f, t].iter().filter(|&&b| b).count() != 1 {
                return Some(format!("{} in {:?} not in exactly one place", u.id, u.state));
            }
            if q != (u.state == UnitState::Queued) {
                return Some(format!("{} queued flag disagrees with {:?}", u.id, u.state));
            }
            if !u.timestamps.is_ordered() {
                return Some(format!("{} timestamps out of order", u.id));
            }
            if self.completions(u.id) > 1 {
                return Some(format!("{} completed twice", u.id));
            }
        }
        for (node, _) in &self.sched.inflight {
            if self.members.get(node).map(|m| m.status) == Some(NodeStatus::Dead) {
                return Some(format!("dead node {node} holds a unit"));
            }
        }
        None
    }

    // --- accounting ---------------------------------------------------------

    pub fn record_instance_start(&mut self, deployment: &str, instance: &str, size: InstanceSize, at: Millis) {
        self.ledger.open(deployment, instance, size, at);
    }

    pub fn record_instance_stop(&mut self, instance: &str, at: Millis) -> bool {
        self.ledger.close(instance, at)
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn accounting_report(&self, now: Millis) -> AccountingReport {
        self.ledger.report(now, &self.config.pricing)
    }

    // --- message handling ---------------------------------------------------

    pub fn handle(&mut self, now: Millis, msg: Message) -> Result<Vec<Outgoing>, MasterError> {
        if !authenticate(&msg, &self.key) {
            return Err(MasterError::AuthFailure(msg.source));
        }
        let kind = msg.kind();
        match msg.payload {
            Payload::Heartbeat(info) => Ok(self.on_heartbeat(now, &msg.source, info)),
            Payload::SubmitApplication(app) => self.submit_application(now, *app, msg.source),
            Payload::WorkUnitResult(r) => self.on_result(now, &msg.source, r),
            Payload::ControlAck(a) => Ok(self.on_ack(now, &msg.source, a)),
            Payload::FileNotification(n) => Ok(self.on_file_notice(now, &n)),
            Payload::AbortWorkUnit { app, unit } => self.abort_unit(now, app, unit),
            _ => Err(MasterError::Unexpected(kind)),
        }
    }

    pub fn on_heartbeat(&mut self, now: Millis, node: &NodeUri, info: HeartbeatInfo) -> Vec<Outgoing> {
        let holds_unit = self.sched.inflight.contains_key(node);
        let entry = match self.members.get_mut(node) {
            Some(e) => e,
            None => {
                self.events.push(MasterEvent::Joined { node: node.clone() });
                self.members.entry(node.clone()).or_insert(MembershipEntry {
                    node: node.clone(),
                    size: info.size,
                    status: NodeStatus::Online,
                    last_heartbeat: now,
                    busy: false,
                    executed_count: 0,
                    joined_at: now,
                    bounced: false,
                })
            }
        };
        if entry.status != NodeStatus::Online {
            self.events.push(MasterEvent::Status { node: node.clone(), from: entry.status, to: NodeStatus::Online });
            entry.status = NodeStatus::Online;
        }
        entry.last_heartbeat = now;
        entry.size = info.size;
        // A worker still busy with something we no longer track is not idle.
        entry.bounced = info.busy && !holds_unit;
        entry.busy = holds_unit || entry.bounced;
        self.make_idle(node);
        self.dispatch(now)
    }

    pub fn submit_application(&mut self, now: Millis, mut app: Application, client: NodeUri) -> Result<Vec<Outgoing>, MasterError> {
        if app.units.is_empty() {
            return Err(MasterError::EmptyApplication(app.id));
        }
        let appending = match self.apps.get(&app.id) {
            Some(existing) if existing.model == Model::Thread && app.model == Model::Thread => true,
            Some(_) => return Err(MasterError::DuplicateApplication(app.id)),
            None => false,
        };
        let mut seen = BTreeSet::new();
        for u in &app.units {
            if self.units.contains_key(&u.id) || !seen.insert(u.id) {
                return Err(MasterError::DuplicateUnit(u.id));
            }
        }

        let new_units = core::mem::take(&mut app.units);
        let count = new_units.len();
        if !appending {
            app.state = AppState::Submitted;
            self.apps.insert(app.id, app.clone());
        }
        self.reported.remove(&app.id);
        self.clients.insert(app.id, client);
        let target = self.apps.get_mut(&app.id).expect("inserted above");
        for mut u in new_units {
            u.app_id = app.id;
            u.state = UnitState::Queued;
            u.assigned_node = None;
            u.retries = 0;
            u.result = None;
            u.timestamps = Default::default();
            u.timestamps.submit = Some(now);
            self.units.insert(u.id, (app.id, target.units.len()));
            self.sched.ready_queue.push_back(u.id);
            target.units.push(u);
        }
        if target.state != AppState::Created {
            target.state = AppState::Submitted;
        }
        target.refresh_state();
        self.events.push(MasterEvent::AppSubmitted { app: app.id, units: count });
        Ok(self.dispatch(now))
    }

    /// Pairs queued units with idle workers until one side runs out.
    pub fn dispatch(&mut self, now: Millis) -> Vec<Outgoing> {
        let mut out = Vec::new();
        loop {
            let Some(pos) = self.sched.ready_queue.iter().position(|&u| self.inputs_ready(u)) else {
                break;
            };
            let node = loop {
                match self.idle.pop_front() {
                    None => break None,
                    Some(n) if self.available(&n) => break Some(n),
                    Some(_) => {}
                }
            };
            let Some(node) = node else { break };
            let id = self.sched.ready_queue.remove(pos).expect("position is in range");
            let (app_id, idx) = self.units[&id];
            let app = self.apps.get_mut(&app_id).expect("indexed app exists");
            let unit = &mut app.units[idx];
            unit.transition(UnitState::Scheduled, now).expect("queued unit can be scheduled");
            unit.assigned_node = Some(node.clone());
            out.push(Outgoing::new(node.clone(), Payload::SubmitWorkUnit(Box::new(unit.clone()))));
            app.refresh_state();
            if let Some(e) = self.members.get_mut(&node) {
                e.busy = true;
            }
            self.sched.inflight.insert(node.clone(), id);
            self.events.push(MasterEvent::Scheduled { unit: id, node });
        }
        out
    }

    pub fn on_ack(&mut self, now: Millis, from: &NodeUri, ack: Ack) -> Vec<Outgoing> {
        let Some(id) = ack.unit else { return Vec::new() };
        match ack.event {
            AckEvent::Started => {
                let Some(u) = self.unit_mut(id) else { return Vec::new() };
                if u.state != UnitState::Scheduled || u.assigned_node.as_ref() != Some(from) {
                    return Vec::new();
                }
                u.transition(UnitState::Running, now).expect("scheduled unit can start");
                let model = u.model;
                let app = u.app_id;
                self.events.push(MasterEvent::Started { unit: id, node: from.clone() });
                match (model, self.clients.get(&app)) {
                    (Model::Thread, Some(client)) => {
                        alloc::vec![Outgoing::new(client.clone(), Payload::ControlAck(ack))]
                    }
                    _ => Vec::new(),
                }
            }
            AckEvent::Busy => {
                if self.sched.inflight.get(from) != Some(&id) {
                    return Vec::new();
                }
                self.sched.inflight.remove(from);
                if let Some(e) = self.members.get_mut(from) {
                    e.bounced = true;
                    e.busy = true;
                }
                let mut out = self.requeue(now, id, true, Some(from.clone()), "bounced");
                out.extend(self.dispatch(now));
                out
            }
            AckEvent::NotRunningHere => {
                // The abort overtook a bounce; finish it here if the unit is back in the queue.
                let queued = self.unit(id).map(|u| u.state) == Some(UnitState::Queued);
                if queued && self.abort_requested.contains(&id) {
                    self.abort_queued(now, id)
                } else {
                    Vec::new()
                }
            }
            AckEvent::Ping => Vec::new(),
        }
    }

    pub fn on_result(&mut self, now: Millis, from: &NodeUri, r: UnitReport) -> Result<Vec<Outgoing>, MasterError> {
        let Some(u) = self.unit(r.unit) else {
            return Err(MasterError::UnknownUnit(r.unit));
        };
        if u.state.is_terminal() || u.assigned_node.as_ref() != Some(from) || self.sched.inflight.get(from) != Some(&r.unit) {
            self.events.push(MasterEvent::Stale { unit: r.unit, from: from.clone() });
            return Err(MasterError::StaleResult { unit: r.unit, from: from.clone() });
        }
        let id = r.unit;
        self.sched.inflight.remove(from);
        let max_retries = self.config.max_retries;
        let abort_pending = self.abort_requested.contains(&id);
        if let Some(e) = self.members.get_mut(from) {
            e.busy = e.bounced;
            if r.outcome == UnitOutcome::Completed {
                e.executed_count += 1;
            }
        }
        self.make_idle(from);

        let u = self.unit_mut(id).expect("checked above");
        if u.state == UnitState::Scheduled {
            u.transition(UnitState::Running, now).expect("scheduled unit can start");
        }
        let mut out = Vec::new();
        match r.outcome {
            UnitOutcome::Completed => {
                u.transition(UnitState::Completed, now).expect("running unit can complete");
                u.result = r.result;
                if !r.outputs.is_empty() {
                    u.output_files = r.outputs;
                }
                *self.completions.entry(id).or_insert(0) += 1;
                self.events.push(MasterEvent::Finished { unit: id, node: from.clone(), state: UnitState::Completed });
                out.extend(self.settle(id));
            }
            UnitOutcome::Failed if u.retries < max_retries && !abort_pending => {
                u.retries += 1;
                out.extend(self.requeue(now, id, false, Some(from.clone()), "failed"));
            }
            outcome => {
                let state = outcome.state();
                u.transition(state, now).expect("running unit can end");
                self.events.push(MasterEvent::Finished { unit: id, node: from.clone(), state });
                out.extend(self.settle(id));
            }
        }
        out.extend(self.dispatch(now));
        Ok(out)
    }

    pub fn on_file_notice(&mut self, now: Millis, n: &TransferNotice) -> Vec<Outgoing> {
        if n.direction == Direction::Upload && n.phase == Phase::End && self.staged.insert(n.file.clone()) {
            self.events.push(MasterEvent::InputStaged { file: n.file.clone() });
            return self.dispatch(now);
        }
        Vec::new()
    }

    /// Client-requested abort. Queued units end immediately; dispatched ones
    /// are cancelled on their worker.
    pub fn abort_unit(&mut self, now: Millis, app: AppId, id: UnitId) -> Result<Vec<Outgoing>, MasterError> {
        let Some(u) = self.unit(id).filter(|u| u.app_id == app) else {
            return Err(MasterError::UnknownUnit(id));
        };
        if u.model == Model::Task {
            return Err(MasterError::TaskAbort(app));
        }
        match u.state {
            UnitState::Queued => Ok(self.abort_queued(now, id)),
            UnitState::Scheduled | UnitState::Running => {
                let node = u.assigned_node.clone().expect("dispatched unit has a node");
                self.abort_requested.insert(id);
                Ok(alloc::vec![Outgoing::new(node, Payload::AbortWorkUnit { app, unit: id })])
            }
            _ => Ok(Vec::new()),
        }
    }

    /// Marks silent workers Suspect, then Dead; a dead worker's unit is requeued.
    pub fn failure_sweep(&mut self, now: Millis) -> Vec<Outgoing> {
        let (suspect, dead) = (self.config.suspect_timeout(), self.config.dead_timeout());
        let mut lost = Vec::new();
        for (node, e) in self.members.iter_mut() {
            if e.status == NodeStatus::Dead {
                continue;
            }
            let silence = now.saturating_sub(e.last_heartbeat);
            let to = if silence > dead {
                NodeStatus::Dead
            } else if silence > suspect {
                NodeStatus::Suspect
            } else {
                e.status
            };
            if to != e.status {
                self.events.push(MasterEvent::Status { node: node.clone(), from: e.status, to });
                e.status = to;
                if to == NodeStatus::Dead {
                    lost.push(node.clone());
                }
            }
        }
        let mut out = Vec::new();
        for node in lost {
            out.extend(self.evict(now, &node, "node dead"));
        }
        out.extend(self.dispatch(now));
        out
    }

    /// The node left the pool (scaled in, deleted or unreachable).
    pub fn release_node(&mut self, now: Millis, node: &NodeUri) -> Vec<Outgoing> {
        if let Some(e) = self.members.get_mut(node) {
            if e.status != NodeStatus::Dead {
                self.events.push(MasterEvent::Status { node: node.clone(), from: e.status, to: NodeStatus::Dead });
                e.status = NodeStatus::Dead;
            }
        }
        let mut out = self.evict(now, node, "node released");
        out.extend(self.dispatch(now));
        out
    }

    // --- internals ----------------------------------------------------------

    fn unit_mut(&mut self, id: UnitId) -> Option<&mut WorkUnit> {
        let &(app, idx) = self.units.get(&id)?;
        self.apps.get_mut(&app).map(|a| &mut a.units[idx])
    }

    fn available(&self, node: &NodeUri) -> bool {
        self.members.get(node).is_some_and(|e| e.status == NodeStatus::Online && !e.busy)
            && !self.sched.inflight.contains_key(node)
    }

    fn make_idle(&mut self, node: &NodeUri) {
        if self.available(node) && !self.idle.contains(node) {
            self.idle.push_back(node.clone());
        }
    }

    fn inputs_ready(&self, id: UnitId) -> bool {
        self.unit(id).is_some_and(|u| {
            u.input_files.iter().all(|f| self.staged.contains(&blob_name(u.app_id, u.id, FileRole::Input, &f.name)))
        })
    }

    fn evict(&mut self, now: Millis, node: &NodeUri, reason: &'static str) -> Vec<Outgoing> {
        if let Some(e) = self.members.get_mut(node) {
            e.busy = false;
            e.bounced = false;
        }
        match self.sched.inflight.remove(node) {
            Some(id) => self.requeue(now, id, true, Some(node.clone()), reason),
            None => Vec::new(),
        }
    }

    /// Puts a dispatched unit back in the queue, or ends it if an abort is pending.
    fn requeue(&mut self, now: Millis, id: UnitId, front: bool, node: Option<NodeUri>, reason: &'static str) -> Vec<Outgoing> {
        let u = self.unit_mut(id).expect("requeued unit exists");
        u.transition(UnitState::Queued, now).expect("dispatched unit can be requeued");
        if front {
            self.sched.ready_queue.push_front(id);
        } else {
            self.sched.ready_queue.push_back(id);
        }
        self.events.push(MasterEvent::Requeued { unit: id, node, reason });
        if self.abort_requested.contains(&id) {
            return self.abort_queued(now, id);
        }
        let app = self.units[&id].0;
        if let Some(a) = self.apps.get_mut(&app) {
            a.refresh_state();
        }
        Vec::new()
    }

    fn abort_queued(&mut self, now: Millis, id: UnitId) -> Vec<Outgoing> {
        self.sched.ready_queue.retain(|&u| u != id);
        let u = self.unit_mut(id).expect("aborted unit exists");
        u.transition(UnitState::Aborted, now).expect("queued unit can be aborted");
        self.events.push(MasterEvent::Aborted { unit: id });
        self.settle(id)
    }

    /// Bookkeeping after a unit reaches a terminal state: client notices and
    /// the application verdict.
    fn settle(&mut self, id: UnitId) -> Vec<Outgoing> {
        self.abort_requested.remove(&id);
        let app_id = self.units[&id].0;
        let client = self.clients.get(&app_id).cloned();
        let app = self.apps.get_mut(&app_id).expect("indexed app exists");
        app.refresh_state();
        let mut out = Vec::new();
        let u = &app.units[self.units[&id].1];
        if let (Model::Thread, Some(c)) = (app.model, &client) {
            let outcome = match u.state {
                UnitState::Completed => UnitOutcome::Completed,
                UnitState::Failed => UnitOutcome::Failed,
                _ => UnitOutcome::Aborted,
            };
            out.push(Outgoing::new(
                c.clone(),
                Payload::WorkUnitResult(UnitReport {
                    app: app_id,
                    unit: id,
                    outcome,
                    result: u.result.clone(),
                    outputs: u.output_files.clone(),
                }),
            ));
        }
        if app.all_terminal() && self.reported.insert(app_id) {
            self.events.push(MasterEvent::AppFinished { app: app_id, state: app.state });
            if let (Model::Task, Some(c)) = (app.model, client) {
                let results = app.units.iter().map(|u| (u.id, u.state, u.result.clone())).collect();
                out.push(Outgoing::new(
                    c,
                    Payload::ApplicationResult(AppReport { app: app_id, state: app.state, results }),
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::MessageId;
    use crate::worker::workload::{spin_params, SPIN};
    use crate::work::FileEntry;
    use alloc::vec;

    const KEY: &str = "k";

    fn master() -> Master {
        Master::new(NodeUri::direct("localhost", 3333), SharedKey::new(KEY), MasterConfig::default())
    }

    fn client() -> NodeUri {
        NodeUri::direct("client", 4000)
    }

    fn worker(i: u16) -> NodeUri {
        NodeUri::direct("10.0.0.4", 20000 + i)
    }

    fn hb(busy: bool) -> HeartbeatInfo {
        HeartbeatInfo { size: InstanceSize::Small, busy, executed: 0 }
    }

    fn app(id: u64, first_unit: u64, n: u64, model: Model) -> Application {
        let mut a = Application::new(AppId(id), "alice", model);
        for i in 0..n {
            a.units.push(WorkUnit::new(UnitId(first_unit + i), AppId(id), model, SPIN, spin_params(100), 100));
        }
        a
    }

    fn submitted(out: &[Outgoing]) -> Vec<(NodeUri, UnitId)> {
        out.iter()
            .filter_map(|o| match &o.payload {
                Payload::SubmitWorkUnit(u) => Some((o.target.clone(), u.id)),
                _ => None,
            })
            .collect()
    }

    fn report(unit: u64, outcome: UnitOutcome) -> UnitReport {
        UnitReport { app: AppId(1), unit: UnitId(unit), outcome, result: None, outputs: vec![] }
    }

    /// Runs every dispatched unit to completion immediately, worker by worker.
    fn drain(m: &mut Master, mut pending: Vec<(NodeUri, UnitId)>, now: &mut Millis) {
        while let Some((node, unit)) = pending.first().cloned() {
            pending.remove(0);
            *now += 1;
            m.on_ack(*now, &node, Ack { unit: Some(unit), event: AckEvent::Started });
            let out = m.on_result(*now, &node, report(unit.0, UnitOutcome::Completed)).unwrap();
            pending.extend(submitted(&out));
        }
    }

    #[test]
    fn heartbeats_build_membership() {
        let mut m = master();
        for i in 0..10 {
            m.on_heartbeat(0, &worker(i), hb(false));
        }
        m.on_heartbeat(5, &worker(0), hb(false));
        assert_eq!(m.members().count(), 10);
        assert_eq!(m.online_count(), 10);
    }

    #[test]
    fn auth_failure_is_rejected() {
        let mut m = master();
        let msg = Message {
            id: MessageId(1),
            source: worker(0),
            target: m.uri.clone(),
            shared_key: SharedKey::new("bad"),
            payload: Payload::Heartbeat(hb(false)),
            sent_at: 0,
        };
        assert_eq!(m.handle(0, msg), Err(MasterError::AuthFailure(worker(0))));
        assert_eq!(m.members().count(), 0);
    }

    #[test]
    fn empty_and_duplicate_applications() {
        let mut m = master();
        assert_eq!(m.submit_application(0, app(1, 0, 0, Model::Task), client()), Err(MasterError::EmptyApplication(AppId(1))));
        m.submit_application(0, app(1, 0, 3, Model::Task), client()).unwrap();
        assert_eq!(m.submit_application(0, app(1, 10, 3, Model::Task), client()), Err(MasterError::DuplicateApplication(AppId(1))));
        assert_eq!(m.submit_application(0, app(2, 2, 3, Model::Task), client()), Err(MasterError::DuplicateUnit(UnitId(2))));
        assert_eq!(m.queue_len(), 3);
    }

    #[test]
    fn no_workers_no_messages() {
        let mut m = master();
        let out = m.submit_application(0, app(1, 0, 100, Model::Task), client()).unwrap();
        assert!(out.is_empty());
        assert_eq!(m.queue_len(), 100);
        assert_eq!(m.app(AppId(1)).unwrap().state, AppState::Submitted);
    }

    #[test]
    fn five_units_ten_workers() {
        let mut m = master();
        for i in 0..10 {
            m.on_heartbeat(0, &worker(i), hb(false));
        }
        let out = m.submit_application(0, app(1, 0, 5, Model::Task), client()).unwrap();
        assert_eq!(submitted(&out).len(), 5);
        assert_eq!(m.members().filter(|e| e.busy).count(), 5);
    }

    #[test]
    fn even_distribution() {
        let mut m = master();
        for i in 0..10 {
            m.on_heartbeat(0, &worker(i), hb(false));
        }
        let out = m.submit_application(0, app(1, 0, 100, Model::Task), client()).unwrap();
        let mut now = 0;
        drain(&mut m, submitted(&out), &mut now);
        assert!(m.members().all(|e| e.executed_count == 10));
        assert_eq!(m.app(AppId(1)).unwrap().state, AppState::Finished);
        assert!(m.invariant_violation().is_none());
    }

    #[test]
    fn last_result_reports_application() {
        let mut m = master();
        m.on_heartbeat(0, &worker(0), hb(false));
        let out = m.submit_application(0, app(1, 0, 1, Model::Task), client()).unwrap();
        assert_eq!(submitted(&out), [(worker(0), UnitId(0))]);
        let out = m.on_result(10, &worker(0), report(0, UnitOutcome::Completed)).unwrap();
        let Payload::ApplicationResult(r) = &out[0].payload else { panic!("{out:?}") };
        assert_eq!(out[0].target, client());
        assert_eq!(r.state, AppState::Finished);
        assert!(m.drain_events().iter().any(|e| matches!(e, MasterEvent::AppFinished { .. })));
    }

    #[test]
    fn duplicate_and_unknown_results() {
        let mut m = master();
        m.on_heartbeat(0, &worker(0), hb(false));
        m.submit_application(0, app(1, 0, 2, Model::Task), client()).unwrap();
        m.on_result(10, &worker(0), report(0, UnitOutcome::Completed)).unwrap();
        let before = m.unit(UnitId(0)).cloned();
        assert!(matches!(m.on_result(11, &worker(0), report(0, UnitOutcome::Completed)), Err(MasterError::StaleResult { .. })));
        assert_eq!(m.unit(UnitId(0)).cloned(), before);
        assert_eq!(m.completions(UnitId(0)), 1);
        assert_eq!(m.on_result(11, &worker(0), report(99, UnitOutcome::Completed)), Err(MasterError::UnknownUnit(UnitId(99))));
    }

    #[test]
    fn suspect_then_dead_requeues() {
        let mut m = master();
        m.on_heartbeat(0, &worker(0), hb(false));
        m.submit_application(0, app(1, 0, 1, Model::Task), client()).unwrap();
        m.on_ack(1, &worker(0), Ack { unit: Some(UnitId(0)), event: AckEvent::Started });
        assert_eq!(m.unit(UnitId(0)).unwrap().state, UnitState::Running);

        m.failure_sweep(3000);
        assert_eq!(m.member(&worker(0)).unwrap().status, NodeStatus::Online);
        m.failure_sweep(3001);
        assert_eq!(m.member(&worker(0)).unwrap().status, NodeStatus::Suspect);
        m.failure_sweep(10_001);
        assert_eq!(m.member(&worker(0)).unwrap().status, NodeStatus::Dead);
        assert_eq!(m.unit(UnitId(0)).unwrap().state, UnitState::Queued);
        assert!(m.invariant_violation().is_none());

        // All workers dead: nothing moves.
        assert!(m.dispatch(10_002).is_empty());
        assert_ne!(m.app(AppId(1)).unwrap().state, AppState::Finished);

        // A new worker picks it up; the dead one's late result is stale.
        let out = m.on_heartbeat(10_500, &worker(1), hb(false));
        assert_eq!(submitted(&out), [(worker(1), UnitId(0))]);
        assert!(matches!(m.on_result(10_600, &worker(0), report(0, UnitOutcome::Completed)), Err(MasterError::StaleResult { .. })));
        m.on_result(10_700, &worker(1), report(0, UnitOutcome::Completed)).unwrap();
        assert_eq!(m.app(AppId(1)).unwrap().state, AppState::Finished);
    }

    #[test]
    fn heartbeat_revives_suspect() {
        let mut m = master();
        m.on_heartbeat(0, &worker(0), hb(false));
        m.failure_sweep(5000);
        assert_eq!(m.member(&worker(0)).unwrap().status, NodeStatus::Suspect);
        m.on_heartbeat(5001, &worker(0), hb(false));
        assert_eq!(m.member(&worker(0)).unwrap().status, NodeStatus::Online);
    }

    #[test]
    fn failed_units_retry_then_fail_app() {
        let mut m = master();
        m.on_heartbeat(0, &worker(0), hb(false));
        m.submit_application(0, app(1, 0, 1, Model::Task), client()).unwrap();
        for attempt in 0..=MAX_RETRIES {
            let out = m.on_result(attempt as u64 + 1, &worker(0), report(0, UnitOutcome::Failed)).unwrap();
            if attempt < MAX_RETRIES {
                assert_eq!(submitted(&out).len(), 1, "attempt {attempt}");
            }
        }
        assert_eq!(m.unit(UnitId(0)).unwrap().state, UnitState::Failed);
        assert_eq!(m.unit(UnitId(0)).unwrap().retries, MAX_RETRIES);
        assert_eq!(m.app(AppId(1)).unwrap().state, AppState::Failed);
    }

    #[test]
    fn bounce_requeues_at_front_until_idle() {
        let mut m = master();
        m.on_heartbeat(0, &worker(0), hb(false));
        m.submit_application(0, app(1, 0, 2, Model::Task), client()).unwrap();
        let out = m.on_ack(1, &worker(0), Ack { unit: Some(UnitId(0)), event: AckEvent::Busy });
        assert!(out.is_empty());
        assert_eq!(m.scheduler().ready_queue.front(), Some(&UnitId(0)));
        let out = m.on_heartbeat(2, &worker(0), hb(true));
        assert!(out.is_empty());
        let out = m.on_heartbeat(3, &worker(0), hb(false));
        assert_eq!(submitted(&out), [(worker(0), UnitId(0))]);
    }

    #[test]
    fn inputs_gate_dispatch() {
        let mut m = master();
        m.on_heartbeat(0, &worker(0), hb(false));
        let mut a = app(1, 0, 1, Model::Task);
        a.units[0].input_files.push(FileEntry::new("in.dat"));
        assert!(m.submit_application(0, a, client()).unwrap().is_empty());
        let notice = |phase| TransferNotice {
            transfer: crate::storage::TransferId(0),
            file: blob_name(AppId(1), UnitId(0), FileRole::Input, "in.dat"),
            phase,
            direction: Direction::Upload,
            at: 1,
        };
        assert!(m.on_file_notice(1, &notice(Phase::Start)).is_empty());
        assert_eq!(submitted(&m.on_file_notice(1, &notice(Phase::End))).len(), 1);
    }

    #[test]
    fn thread_units_notify_and_abort() {
        let mut m = master();
        m.on_heartbeat(0, &worker(0), hb(false));
        m.submit_application(0, app(1, 0, 1, Model::Thread), client()).unwrap();
        // Appending reuses the application.
        m.submit_application(1, app(1, 1, 1, Model::Thread), client()).unwrap();
        assert_eq!(m.app(AppId(1)).unwrap().units.len(), 2);

        let out = m.on_ack(2, &worker(0), Ack { unit: Some(UnitId(0)), event: AckEvent::Started });
        assert_eq!(out[0].target, client());

        // Queued unit aborts immediately.
        let out = m.abort_unit(3, AppId(1), UnitId(1)).unwrap();
        assert!(matches!(&out[0].payload, Payload::WorkUnitResult(r) if r.outcome == UnitOutcome::Aborted));
        // Running unit is cancelled on its worker.
        let out = m.abort_unit(4, AppId(1), UnitId(0)).unwrap();
        assert_eq!(out[0].payload, Payload::AbortWorkUnit { app: AppId(1), unit: UnitId(0) });
        m.on_result(5, &worker(0), report(0, UnitOutcome::Aborted)).unwrap();
        assert_eq!(m.app(AppId(1)).unwrap().state, AppState::Finished);
        assert!(m.invariant_violation().is_none());
    }

    #[test]
    fn release_node_requeues() {
        let mut m = master();
        m.on_heartbeat(0, &worker(0), hb(false));
        m.submit_application(0, app(1, 0, 1, Model::Task), client()).unwrap();
        m.release_node(5, &worker(0));
        assert_eq!(m.unit(UnitId(0)).unwrap().state, UnitState::Queued);
        assert_eq!(m.member(&worker(0)).unwrap().status, NodeStatus::Dead);
    }

    #[test]
    fn accounting_through_master() {
        let mut m = master();
        m.record_instance_start("d", "Worker_IN_0", InstanceSize::Small, 0);
        m.record_instance_start("d", "Master_IN_0", InstanceSize::Medium, 0);
        m.record_instance_stop("Worker_IN_0", 61 * 60_000);
        let r = m.accounting_report(2 * 3_600_000);
        assert_eq!(r.records[0].billed_hours, 2);
        assert_eq!(r.records[1].billed_hours, 2);
        assert_eq!(r.total_amount, 2.0 + 4.0);
    }
}
