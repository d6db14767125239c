//! Work units and applications.

use crate::clock::Millis;
use crate::uri::NodeUri;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UnitId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AppId(pub u64);

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}", self.0)
    }
}

impl fmt::Display for AppId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "app{}", self.0)
    }
}

/// Programming model an application was written against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Model {
    Task,
    Thread,
}

/// Workload parameters: name to scalar.
pub type Params = BTreeMap<String, f64>;

/// Opaque workload output. Layout is defined by each registered workload.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ResultData(pub Vec<u64>);

/// One entry of a file manifest.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FileEntry {
    pub name: String,
}

impl FileEntry {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnitState {
    Queued,
    Scheduled,
    Running,
    Completed,
    Failed,
    Aborted,
}

impl UnitState {
    pub const ALL: [UnitState; 6] = [
        UnitState::Queued,
        UnitState::Scheduled,
        UnitState::Running,
        UnitState::Completed,
        UnitState::Failed,
        UnitState::Aborted,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, UnitState::Completed | UnitState::Failed | UnitState::Aborted)
    }

    /// The declared edge set.
    ///
    /// Besides the forward path, a unit may return to `Queued` from `Scheduled`
    /// or `Running` when its worker is lost or its attempt is retried, and a
    /// Thread-model abort may hit a unit that has not started yet.
    pub fn can_transition(self, to: UnitState) -> bool {
        use UnitState::*;
        matches!(
            (self, to),
            (Queued, Scheduled)
                | (Queued, Aborted)
                | (Scheduled, Running)
                | (Scheduled, Queued)
                | (Scheduled, Aborted)
                | (Running, Completed)
                | (Running, Failed)
                | (Running, Aborted)
                | (Running, Queued)
        )
    }
}

impl fmt::Display for UnitState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal work unit transition {from} -> {to} for {unit}")]
pub struct TransitionError {
    pub unit: UnitId,
    pub from: UnitState,
    pub to: UnitState,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UnitTimestamps {
    pub submit: Option<Millis>,
    pub schedule: Option<Millis>,
    pub start: Option<Millis>,
    pub finish: Option<Millis>,
}

impl UnitTimestamps {
    /// `finish >= start >= schedule >= submit` over whichever are set.
    pub fn is_ordered(&self) -> bool {
        let seq = [self.submit, self.schedule, self.start, self.finish];
        let mut last = None;
        for t in seq.into_iter().flatten() {
            if let Some(prev) = last {
                if t < prev {
                    return false;
                }
            }
            last = Some(t);
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkUnit {
    pub id: UnitId,
    pub app_id: AppId,
    pub model: Model,
    pub operation: String,
    pub params: Params,
    /// Abstract compute units; wall time is `cost / (cores * speed)`.
    pub cost: u64,
    pub state: UnitState,
    pub assigned_node: Option<NodeUri>,
    pub timestamps: UnitTimestamps,
    pub input_files: Vec<FileEntry>,
    pub output_files: Vec<FileEntry>,
    pub result: Option<ResultData>,
    /// Retries consumed after failed attempts.
    pub retries: u32,
}

impl WorkUnit {
    pub fn new(id: UnitId, app_id: AppId, model: Model, operation: impl Into<String>, params: Params, cost: u64) -> Self {
        Self {
            id,
            app_id,
            model,
            operation: operation.into(),
            params,
            cost,
            state: UnitState::Queued,
            assigned_node: None,
            timestamps: UnitTimestamps::default(),
            input_files: Vec::new(),
            output_files: Vec::new(),
            result: None,
            retries: 0,
        }
    }

    /// Moves the unit along a declared edge and stamps the matching timestamp.
    pub fn transition(&mut self, to: UnitState, at: Millis) -> Result<(), TransitionError> {
        if !self.state.can_transition(to) {
            return Err(TransitionError { unit: self.id, from: self.state, to });
        }
        match to {
            UnitState::Queued => {
                self.assigned_node = None;
                self.timestamps.schedule = None;
                self.timestamps.start = None;
            }
            UnitState::Scheduled => self.timestamps.schedule = Some(at),
            UnitState::Running => self.timestamps.start = Some(at),
            UnitState::Completed | UnitState::Failed | UnitState::Aborted => self.timestamps.finish = Some(at),
        }
        self.state = to;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AppState {
    Created,
    Submitted,
    Running,
    Finished,
    Failed,
}

impl fmt::Display for AppState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Application {
    pub id: AppId,
    pub user: String,
    pub model: Model,
    pub units: Vec<WorkUnit>,
    pub state: AppState,
    pub shared_files: Vec<FileEntry>,
}

impl Application {
    pub fn new(id: AppId, user: impl Into<String>, model: Model) -> Self {
        Self {
            id,
            user: user.into(),
            model,
            units: Vec::new(),
            state: AppState::Created,
            shared_files: Vec::new(),
        }
    }

    pub fn all_terminal(&self) -> bool {
        !self.units.is_empty() && self.units.iter().all(|u| u.state.is_terminal())
    }

    /// Recomputes the state from the units once the application is submitted.
    ///
    /// Any `Failed` unit fails the application. Otherwise it is `Finished` when
    /// every unit is terminal (`Completed`, or `Aborted` by an explicit
    /// Thread-model request), `Running` once something has been scheduled.
    pub fn refresh_state(&mut self) {
        if self.state == AppState::Created {
            return;
        }
        if self.units.iter().any(|u| u.state == UnitState::Failed) {
            self.state = AppState::Failed;
        } else if self.all_terminal() {
            self.state = AppState::Finished;
        } else if self.units.iter().any(|u| u.state != UnitState::Queued) {
            self.state = AppState::Running;
        } else {
            self.state = AppState::Submitted;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> WorkUnit {
        WorkUnit::new(UnitId(1), AppId(1), Model::Task, "spin", Params::new(), 10)
    }

    #[test]
    fn exhaustive_transition_guard() {
        use UnitState::*;
        let allowed = [
            (Queued, Scheduled),
            (Queued, Aborted),
            (Scheduled, Running),
            (Scheduled, Queued),
            (Scheduled, Aborted),
            (Running, Completed),
            (Running, Failed),
            (Running, Aborted),
            (Running, Queued),
        ];
        for from in UnitState::ALL {
            for to in UnitState::ALL {
                let mut u = unit();
                u.state = from;
                let ok = u.transition(to, 5).is_ok();
                assert_eq!(ok, allowed.contains(&(from, to)), "{from} -> {to}");
                if !ok {
                    assert_eq!(u.state, from);
                }
            }
        }
        for s in [Completed, Failed, Aborted] {
            assert!(UnitState::ALL.iter().all(|&to| !s.can_transition(to)));
        }
    }

    #[test]
    fn timestamps_follow_transitions() {
        let mut u = unit();
        u.timestamps.submit = Some(0);
        u.transition(UnitState::Scheduled, 3).unwrap();
        u.transition(UnitState::Running, 7).unwrap();
        u.transition(UnitState::Completed, 20).unwrap();
        assert_eq!(u.timestamps.finish, Some(20));
        assert!(u.timestamps.is_ordered());

        let bad = UnitTimestamps { submit: Some(5), schedule: Some(4), ..Default::default() };
        assert!(!bad.is_ordered());
    }

    #[test]
    fn requeue_clears_assignment() {
        let mut u = unit();
        u.transition(UnitState::Scheduled, 1).unwrap();
        u.assigned_node = Some(NodeUri::direct("w", 1));
        u.transition(UnitState::Running, 2).unwrap();
        u.transition(UnitState::Queued, 3).unwrap();
        assert!(u.assigned_node.is_none());
        assert_eq!(u.timestamps.start, None);
    }

    #[test]
    fn application_state_from_units() {
        let mut app = Application::new(AppId(1), "alice", Model::Task);
        app.units.push(unit());
        app.refresh_state();
        assert_eq!(app.state, AppState::Created);
        app.state = AppState::Submitted;
        app.refresh_state();
        assert_eq!(app.state, AppState::Submitted);
        app.units[0].state = UnitState::Completed;
        app.refresh_state();
        assert_eq!(app.state, AppState::Finished);
        app.units[0].state = UnitState::Failed;
        app.refresh_state();
        assert_eq!(app.state, AppState::Failed);
    }
}
