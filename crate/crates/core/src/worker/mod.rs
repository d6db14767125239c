//! The worker container.
//!
//! Runs one work unit at a time. Execution is a scheduled completion event
//! at `now + cost / (cores * speed)`; aborting cancels it by invalidating
//! the execution token. Inputs are downloaded before the unit starts and
//! outputs uploaded before the result goes out.

pub mod workload;

use crate::clock::Millis;
use crate::instance::InstanceSize;
use crate::message::{Ack, AckEvent, HeartbeatInfo, Outgoing, Payload, UnitOutcome, UnitReport};
use crate::netsim::Region;
use crate::storage::{blob_name, ConnectionString, FileRole, Storage, StorageError};
use crate::uri::NodeUri;
use crate::work::{ResultData, UnitId, UnitState, WorkUnit};
use alloc::string::String;
use alloc::vec::Vec;
pub use workload::{Workload, WorkloadRegistry};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkerError {
    #[error("worker busy with {running}, bounced {bounced}")]
    Busy { running: UnitId, bounced: UnitId },
    #[error("operation `{0}` is not registered")]
    UnknownOperation(String),
    #[error("unit {0} is not running here")]
    NotRunningHere(UnitId),
    #[error("file staging failed: {0}")]
    Storage(#[from] StorageError),
}

/// Storage account and container the worker stages files through.
pub struct FileAccess<'a> {
    pub storage: &'a mut Storage,
    pub account: &'a str,
    pub container: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
struct Execution {
    unit: WorkUnit,
    token: u64,
    due: Millis,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubmitOutcome {
    /// Unit is running; schedule completion `token` at `due`.
    Started { token: u64, due: Millis, ack: Outgoing },
    /// Worker was occupied; the unit goes back to the master.
    Bounced { error: WorkerError, reply: Outgoing },
    /// Unit could not start and is reported Failed.
    Rejected { error: WorkerError, reply: Outgoing },
}

#[derive(Debug, Clone)]
pub struct Worker {
    pub node: NodeUri,
    pub master: NodeUri,
    pub size: InstanceSize,
    pub region: Region,
    pub heartbeat_enabled: bool,
    pub paused: bool,
    current: Option<Execution>,
    executed_count: u64,
    next_token: u64,
    assigned: Vec<UnitId>,
    conn: Option<ConnectionString>,
}

impl Worker {
    pub fn new(node: NodeUri, master: NodeUri, size: InstanceSize, region: Region) -> Self {
        Self {
            node,
            master,
            size,
            region,
            heartbeat_enabled: false,
            paused: false,
            current: None,
            executed_count: 0,
            next_token: 0,
            assigned: Vec::new(),
            conn: None,
        }
    }

    pub fn current(&self) -> Option<UnitId> {
        self.current.as_ref().map(|e| e.unit.id)
    }

    pub fn is_busy(&self) -> bool {
        self.current.is_some()
    }

    pub fn executed_count(&self) -> u64 {
        self.executed_count
    }

    /// Every unit ever handed to this worker, in arrival order.
    pub fn assigned(&self) -> &[UnitId] {
        &self.assigned
    }

    fn result_to_master(&self, unit: &WorkUnit, outcome: UnitOutcome, result: Option<ResultData>) -> Outgoing {
        Outgoing::new(
            self.master.clone(),
            Payload::WorkUnitResult(UnitReport {
                app: unit.app_id,
                unit: unit.id,
                outcome,
                result,
                outputs: if outcome == UnitOutcome::Completed { unit.output_files.clone() } else { Vec::new() },
            }),
        )
    }

    fn channel(&mut self, files: &mut FileAccess<'_>, now: Millis) -> Result<ConnectionString, StorageError> {
        match &self.conn {
            Some(c) if now <= c.expiry => Ok(c.clone()),
            _ => {
                let c = files.storage.open_channel(files.account, files.container, now)?;
                self.conn = Some(c.clone());
                Ok(c)
            }
        }
    }

    pub fn on_submit(
        &mut self,
        now: Millis,
        mut unit: WorkUnit,
        registry: &WorkloadRegistry,
        files: Option<FileAccess<'_>>,
    ) -> SubmitOutcome {
        if let Some(running) = self.current() {
            let bounced = unit.id;
            return SubmitOutcome::Bounced {
                error: WorkerError::Busy { running, bounced },
                reply: Outgoing::new(self.master.clone(), Payload::ControlAck(Ack { unit: Some(bounced), event: AckEvent::Busy })),
            };
        }
        self.assigned.push(unit.id);
        if !registry.contains(&unit.operation) {
            let reply = self.result_to_master(&unit, UnitOutcome::Failed, None);
            return SubmitOutcome::Rejected { error: WorkerError::UnknownOperation(unit.operation), reply };
        }
        if !unit.input_files.is_empty() {
            let staged = match files {
                Some(mut f) => self.fetch_inputs(&unit, &mut f, now),
                None => Err(StorageError::StorageUnavailable),
            };
            if let Err(e) = staged {
                let reply = self.result_to_master(&unit, UnitOutcome::Failed, None);
                return SubmitOutcome::Rejected { error: e.into(), reply };
            }
        }

        let token = self.next_token;
        self.next_token += 1;
        let due = now + self.size.execution_ms(unit.cost);
        unit.state = UnitState::Running;
        unit.timestamps.start = Some(now);
        let id = unit.id;
        self.current = Some(Execution { unit, token, due });
        SubmitOutcome::Started {
            token,
            due,
            ack: Outgoing::new(self.master.clone(), Payload::ControlAck(Ack { unit: Some(id), event: AckEvent::Started })),
        }
    }

    fn fetch_inputs(&mut self, unit: &WorkUnit, files: &mut FileAccess<'_>, now: Millis) -> Result<(), StorageError> {
        let conn = self.channel(files, now)?;
        for f in &unit.input_files {
            files.storage.download_file(&conn, &blob_name(unit.app_id, unit.id, FileRole::Input, &f.name), now)?;
        }
        Ok(())
    }

    /// Finishes the execution identified by `token`. Returns `None` when the
    /// token is stale (aborted or superseded).
    pub fn complete(
        &mut self,
        now: Millis,
        token: u64,
        registry: &WorkloadRegistry,
        files: Option<FileAccess<'_>>,
    ) -> Option<(WorkUnit, Outgoing)> {
        if self.current.as_ref().map(|e| e.token) != Some(token) {
            return None;
        }
        let Execution { mut unit, .. } = self.current.take()?;
        let Some(workload) = registry.get(&unit.operation) else {
            unit.state = UnitState::Failed;
            let out = self.result_to_master(&unit, UnitOutcome::Failed, None);
            return Some((unit, out));
        };
        let result = (workload.run)(&unit.params);

        let mut outcome = UnitOutcome::Completed;
        if !unit.output_files.is_empty() {
            let uploaded = match files {
                Some(mut f) => self.store_outputs(&unit, &result, &mut f, now),
                None => Err(StorageError::StorageUnavailable),
            };
            if uploaded.is_err() {
                outcome = UnitOutcome::Failed;
            }
        }
        unit.state = outcome.state();
        unit.timestamps.finish = Some(now);
        if outcome == UnitOutcome::Completed {
            self.executed_count += 1;
            unit.result = Some(result.clone());
        }
        let out = self.result_to_master(&unit, outcome, (outcome == UnitOutcome::Completed).then_some(result));
        Some((unit, out))
    }

    fn store_outputs(
        &mut self,
        unit: &WorkUnit,
        result: &ResultData,
        files: &mut FileAccess<'_>,
        now: Millis,
    ) -> Result<(), StorageError> {
        let conn = self.channel(files, now)?;
        let bytes = output_bytes(result);
        for f in &unit.output_files {
            files.storage.upload_file(&conn, &blob_name(unit.app_id, unit.id, FileRole::Output, &f.name), &bytes, now)?;
        }
        Ok(())
    }

    /// Cancels the running unit and reports it Aborted.
    pub fn abort(&mut self, now: Millis, unit: UnitId) -> Result<Outgoing, WorkerError> {
        match &self.current {
            Some(e) if e.unit.id == unit => {
                let mut e = self.current.take().expect("checked");
                e.unit.state = UnitState::Aborted;
                e.unit.timestamps.finish = Some(now);
                Ok(self.result_to_master(&e.unit, UnitOutcome::Aborted, None))
            }
            _ => Err(WorkerError::NotRunningHere(unit)),
        }
    }

    /// Drops any running unit without reporting (instance stopped or paused).
    pub fn halt(&mut self) -> Option<UnitId> {
        self.current.take().map(|e| e.unit.id)
    }

    pub fn heartbeat(&self) -> Option<Outgoing> {
        if !self.heartbeat_enabled || self.paused {
            return None;
        }
        Some(Outgoing::new(
            self.master.clone(),
            Payload::Heartbeat(HeartbeatInfo { size: self.size, busy: self.is_busy(), executed: self.executed_count }),
        ))
    }

    pub fn due(&self) -> Option<Millis> {
        self.current.as_ref().map(|e| e.due)
    }
}

/// Output file body: the result words, little-endian.
pub fn output_bytes(result: &ResultData) -> Vec<u8> {
    result.0.iter().flat_map(|w| w.to_le_bytes()).collect()
}

#[cfg(test)]
mod tests {
    use super::workload::{spin_params, SPIN};
    use super::*;
    use crate::work::{AppId, FileEntry, Model};
    use alloc::vec;

    fn worker(size: InstanceSize) -> Worker {
        let mut w = Worker::new(NodeUri::direct("10.0.0.5", 20001), NodeUri::direct("localhost", 3333), size, Region::Cloud);
        w.heartbeat_enabled = true;
        w
    }

    fn unit(id: u64, op: &str, cost: u64) -> WorkUnit {
        let mut u = WorkUnit::new(UnitId(id), AppId(1), Model::Task, op, spin_params(cost), cost);
        u.state = UnitState::Scheduled;
        u
    }

    #[test]
    fn execution_time_small_and_medium() {
        let reg = WorkloadRegistry::with_builtins();
        let mut s = worker(InstanceSize::Small);
        match s.on_submit(100, unit(1, SPIN, 1600), &reg, None) {
            SubmitOutcome::Started { due, ack, .. } => {
                assert_eq!(due, 1100);
                assert_eq!(ack.payload, Payload::ControlAck(Ack { unit: Some(UnitId(1)), event: AckEvent::Started }));
            }
            other => panic!("{other:?}"),
        }
        let mut m = worker(InstanceSize::Medium);
        match m.on_submit(0, unit(1, SPIN, 1600), &reg, None) {
            SubmitOutcome::Started { due, .. } => assert_eq!(due, 500),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_operation_reports_failed() {
        let reg = WorkloadRegistry::with_builtins();
        let mut w = worker(InstanceSize::Small);
        match w.on_submit(0, unit(1, "nope", 10), &reg, None) {
            SubmitOutcome::Rejected { error, reply } => {
                assert_eq!(error, WorkerError::UnknownOperation("nope".into()));
                match reply.payload {
                    Payload::WorkUnitResult(r) => assert_eq!(r.outcome, UnitOutcome::Failed),
                    other => panic!("{other:?}"),
                }
            }
            other => panic!("{other:?}"),
        }
        assert!(!w.is_busy());
    }

    #[test]
    fn busy_worker_bounces() {
        let reg = WorkloadRegistry::with_builtins();
        let mut w = worker(InstanceSize::Small);
        assert!(matches!(w.on_submit(0, unit(1, SPIN, 10), &reg, None), SubmitOutcome::Started { .. }));
        match w.on_submit(1, unit(2, SPIN, 10), &reg, None) {
            SubmitOutcome::Bounced { error, .. } => {
                assert_eq!(error, WorkerError::Busy { running: UnitId(1), bounced: UnitId(2) })
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(w.assigned(), &[UnitId(1)]);
    }

    #[test]
    fn completion_reports_result_once() {
        let reg = WorkloadRegistry::with_builtins();
        let mut w = worker(InstanceSize::Small);
        let SubmitOutcome::Started { token, due, .. } = w.on_submit(0, unit(1, SPIN, 16), &reg, None) else { panic!() };
        let (u, out) = w.complete(due, token, &reg, None).unwrap();
        assert_eq!(u.state, UnitState::Completed);
        match out.payload {
            Payload::WorkUnitResult(r) => {
                assert_eq!(r.outcome, UnitOutcome::Completed);
                assert_eq!(r.result, Some(ResultData(vec![16])));
            }
            other => panic!("{other:?}"),
        }
        assert!(w.complete(due, token, &reg, None).is_none());
        assert_eq!(w.executed_count(), 1);
    }

    #[test]
    fn abort_cancels_completion() {
        let reg = WorkloadRegistry::with_builtins();
        let mut w = worker(InstanceSize::Small);
        let SubmitOutcome::Started { token, due, .. } = w.on_submit(0, unit(1, SPIN, 1600), &reg, None) else { panic!() };
        let out = w.abort(500, UnitId(1)).unwrap();
        assert!(matches!(out.payload, Payload::WorkUnitResult(UnitReport { outcome: UnitOutcome::Aborted, .. })));
        assert!(w.complete(due, token, &reg, None).is_none());
        assert_eq!(w.abort(600, UnitId(1)), Err(WorkerError::NotRunningHere(UnitId(1))));
        // A fresh unit runs normally afterwards.
        let SubmitOutcome::Started { token, due, .. } = w.on_submit(700, unit(2, SPIN, 16), &reg, None) else { panic!() };
        assert!(w.complete(due, token, &reg, None).is_some());
    }

    #[test]
    fn heartbeat_gated() {
        let mut w = worker(InstanceSize::Small);
        w.heartbeat_enabled = false;
        assert!(w.heartbeat().is_none());
        w.heartbeat_enabled = true;
        let hb = w.heartbeat().unwrap();
        assert_eq!(
            hb.payload,
            Payload::Heartbeat(HeartbeatInfo { size: InstanceSize::Small, busy: false, executed: 0 })
        );
        w.paused = true;
        assert!(w.heartbeat().is_none());
    }

    #[test]
    fn stages_inputs_and_outputs() {
        let reg = WorkloadRegistry::with_builtins();
        let mut storage = Storage::new();
        storage.add_account("acct", "key");
        let conn = storage.open_channel("acct", "files", 0).unwrap();
        let mut u = unit(4, SPIN, 8);
        u.input_files.push(FileEntry::new("in.dat"));
        u.output_files.push(FileEntry::new("out.dat"));
        storage.upload_file(&conn, &blob_name(AppId(1), UnitId(4), FileRole::Input, "in.dat"), b"abc", 0).unwrap();

        let mut w = worker(InstanceSize::Small);
        let access = FileAccess { storage: &mut storage, account: "acct", container: "files" };
        let SubmitOutcome::Started { token, due, .. } = w.on_submit(10, u, &reg, Some(access)) else { panic!() };
        let access = FileAccess { storage: &mut storage, account: "acct", container: "files" };
        let (u, _) = w.complete(due, token, &reg, Some(access)).unwrap();
        assert_eq!(u.state, UnitState::Completed);
        let out = storage.blobs().get("files", &blob_name(AppId(1), UnitId(4), FileRole::Output, "out.dat")).unwrap();
        assert_eq!(out.data, output_bytes(&ResultData(vec![8])));
    }

    #[test]
    fn missing_input_fails_unit() {
        let reg = WorkloadRegistry::with_builtins();
        let mut storage = Storage::new();
        storage.add_account("acct", "key");
        let mut u = unit(4, SPIN, 8);
        u.input_files.push(FileEntry::new("absent"));
        let mut w = worker(InstanceSize::Small);
        let access = FileAccess { storage: &mut storage, account: "acct", container: "files" };
        assert!(matches!(
            w.on_submit(0, u, &reg, Some(access)),
            SubmitOutcome::Rejected { error: WorkerError::Storage(StorageError::NotFound { .. }), .. }
        ));
    }
}
