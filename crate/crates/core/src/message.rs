//! The unit of communication between containers.

use crate::clock::Millis;
use crate::instance::InstanceSize;
use crate::storage::TransferNotice;
use crate::uri::NodeUri;
use crate::work::{AppId, AppState, Application, FileEntry, ResultData, UnitId, UnitState, WorkUnit};
use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MessageId(pub u64);

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// Cloud-wide credential shared by every container.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct SharedKey(String);

impl SharedKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for SharedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SharedKey(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Heartbeat,
    SubmitWorkUnit,
    WorkUnitResult,
    ControlAck,
    FileNotification,
    ProxyNak,
    SubmitApplication,
    AbortWorkUnit,
    ApplicationResult,
}

impl MessageKind {
    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Heartbeat => "Heartbeat",
            MessageKind::SubmitWorkUnit => "SubmitWorkUnit",
            MessageKind::WorkUnitResult => "WorkUnitResult",
            MessageKind::ControlAck => "ControlAck",
            MessageKind::FileNotification => "FileNotification",
            MessageKind::ProxyNak => "ProxyNak",
            MessageKind::SubmitApplication => "SubmitApplication",
            MessageKind::AbortWorkUnit => "AbortWorkUnit",
            MessageKind::ApplicationResult => "ApplicationResult",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeartbeatInfo {
    pub size: InstanceSize,
    pub busy: bool,
    pub executed: u64,
}

/// Terminal status reported for one execution attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitOutcome {
    Completed,
    Failed,
    Aborted,
}

impl UnitOutcome {
    pub fn state(self) -> UnitState {
        match self {
            UnitOutcome::Completed => UnitState::Completed,
            UnitOutcome::Failed => UnitState::Failed,
            UnitOutcome::Aborted => UnitState::Aborted,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitReport {
    pub app: AppId,
    pub unit: UnitId,
    pub outcome: UnitOutcome,
    pub result: Option<ResultData>,
    pub outputs: Vec<FileEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckEvent {
    /// Worker began executing the unit.
    Started,
    /// Worker was busy; the unit goes back to the master's queue.
    Busy,
    /// Abort named a unit the worker is not running.
    NotRunningHere,
    /// Routing probe with no side effects.
    Ping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    pub unit: Option<UnitId>,
    pub event: AckEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppReport {
    pub app: AppId,
    pub state: AppState,
    pub results: Vec<(UnitId, UnitState, Option<ResultData>)>,
}

/// Kind-specific body. The message kind is derived from the variant.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Heartbeat(HeartbeatInfo),
    SubmitWorkUnit(Box<WorkUnit>),
    WorkUnitResult(UnitReport),
    ControlAck(Ack),
    FileNotification(TransferNotice),
    ProxyNak { rejected: MessageId },
    SubmitApplication(Box<Application>),
    AbortWorkUnit { app: AppId, unit: UnitId },
    ApplicationResult(AppReport),
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Heartbeat(_) => MessageKind::Heartbeat,
            Payload::SubmitWorkUnit(_) => MessageKind::SubmitWorkUnit,
            Payload::WorkUnitResult(_) => MessageKind::WorkUnitResult,
            Payload::ControlAck(_) => MessageKind::ControlAck,
            Payload::FileNotification(_) => MessageKind::FileNotification,
            Payload::ProxyNak { .. } => MessageKind::ProxyNak,
            Payload::SubmitApplication(_) => MessageKind::SubmitApplication,
            Payload::AbortWorkUnit { .. } => MessageKind::AbortWorkUnit,
            Payload::ApplicationResult(_) => MessageKind::ApplicationResult,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub id: MessageId,
    pub source: NodeUri,
    pub target: NodeUri,
    pub shared_key: SharedKey,
    pub payload: Payload,
    pub sent_at: Millis,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }
}

/// A message a handler wants sent; the event loop stamps id, source, key and time.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub target: NodeUri,
    pub payload: Payload,
}

impl Outgoing {
    pub fn new(target: NodeUri, payload: Payload) -> Self {
        Self { target, payload }
    }
}

/// True iff the message carries exactly the configured key.
pub fn authenticate(msg: &Message, key: &SharedKey) -> bool {
    msg.shared_key.as_str().as_bytes() == key.as_str().as_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE_KEY: &str = "Qq6dthHKWph0QkS5X7rJL0qLeR14IQfgMexGapTBouijEZzy2XGM3ytK/uldFHQB";

    fn msg(key: &str) -> Message {
        Message {
            id: MessageId(1),
            source: NodeUri::direct("a", 1),
            target: NodeUri::direct("b", 2),
            shared_key: SharedKey::new(key),
            payload: Payload::ProxyNak { rejected: MessageId(0) },
            sent_at: 0,
        }
    }

    #[test]
    fn authenticates_on_exact_match() {
        assert!(authenticate(&msg("k1"), &SharedKey::new("k1")));
        assert!(!authenticate(&msg("k1"), &SharedKey::new("k2")));
        assert!(!authenticate(&msg(""), &SharedKey::new("k")));
        assert!(!authenticate(&msg("k"), &SharedKey::new("")));
        assert!(authenticate(&msg(SAMPLE_KEY), &SharedKey::new(SAMPLE_KEY)));
        assert!(!authenticate(&msg(SAMPLE_KEY), &SharedKey::new(&SAMPLE_KEY[1..])));
    }

    #[test]
    fn kind_follows_payload() {
        assert_eq!(msg("k").kind(), MessageKind::ProxyNak);
        let hb = Payload::Heartbeat(HeartbeatInfo { size: InstanceSize::Small, busy: false, executed: 0 });
        assert_eq!(hb.kind(), MessageKind::Heartbeat);
    }

    #[test]
    fn key_debug_is_redacted() {
        let s = alloc::format!("{:?}", SharedKey::new(SAMPLE_KEY));
        assert!(!s.contains("Qq6"));
    }
}
