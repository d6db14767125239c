//! Client-side programming models.
//!
//! The Task model is submit-and-forget: a [`TaskApplication`] collects
//! independent tasks, is submitted once and reports back once. The Thread
//! model exposes each unit as a [`RemoteThread`] with start, join and abort.
//! [`ClientActor`] is the client's end of the conversation with the master.

use crate::clock::Millis;
use crate::message::{Ack, AckEvent, AppReport, Outgoing, Payload, UnitOutcome, UnitReport};
use crate::storage::{blob_name, FileRole};
use crate::uri::NodeUri;
use crate::work::{AppId, AppState, Application, FileEntry, Model, Params, ResultData, UnitId, WorkUnit};
use crate::worker::workload::{histogram, TileResult, TileWindow, WorkloadRegistry, MANDELBROT_TILE};
use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("application has no tasks")]
    EmptyApplication,
    #[error("application {0} was already submitted")]
    AlreadySubmitted(AppId),
    #[error("thread {thread}: {op} not allowed while {state}")]
    InvalidThreadState { thread: UnitId, state: ThreadState, op: ThreadOp },
    #[error("unknown thread {0}")]
    UnknownThread(UnitId),
    #[error("unknown application {0}")]
    UnknownApplication(AppId),
    #[error("{tiles} tiles cannot split a {width}x{height} image")]
    BadTiling { width: u32, height: u32, tiles: u32 },
}

// --- Task model -------------------------------------------------------------

/// One independent task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub operation: String,
    pub params: Params,
    pub cost: u64,
    /// Input files with their contents; uploaded before submission.
    pub inputs: Vec<(String, Vec<u8>)>,
    /// Names of files the task writes.
    pub outputs: Vec<String>,
}

impl TaskSpec {
    pub fn new(operation: impl Into<String>, params: Params, cost: u64) -> Self {
        Self { operation: operation.into(), params, cost, inputs: Vec::new(), outputs: Vec::new() }
    }
}

/// A blob the client must upload before the master may dispatch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Upload {
    pub blob: String,
    pub data: Vec<u8>,
}

type Callback = Box<dyn FnMut(&AppReport)>;

/// Handle for a Task-model application. No per-task control once submitted.
pub struct TaskApplication {
    id: AppId,
    user: String,
    tasks: Vec<TaskSpec>,
    unit_ids: Vec<UnitId>,
    submitted: bool,
    report: Option<AppReport>,
    callback: Option<Callback>,
    completions: u32,
}

impl fmt::Debug for TaskApplication {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TaskApplication")
            .field("id", &self.id)
            .field("tasks", &self.tasks.len())
            .field("submitted", &self.submitted)
            .field("report", &self.report.as_ref().map(|r| r.state))
            .finish()
    }
}

impl TaskApplication {
    pub fn new(id: AppId, user: impl Into<String>) -> Self {
        Self {
            id,
            user: user.into(),
            tasks: Vec::new(),
            unit_ids: Vec::new(),
            submitted: false,
            report: None,
            callback: None,
            completions: 0,
        }
    }

    pub fn id(&self) -> AppId {
        self.id
    }

    pub fn add_task(&mut self, task: TaskSpec) -> Result<(), ModelError> {
        if self.submitted {
            return Err(ModelError::AlreadySubmitted(self.id));
        }
        self.tasks.push(task);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn is_submitted(&self) -> bool {
        self.submitted
    }

    /// Registers a function run once, when the final report arrives.
    pub fn on_complete(&mut self, f: impl FnMut(&AppReport) + 'static) {
        self.callback = Some(Box::new(f));
    }

    pub fn unit_ids(&self) -> &[UnitId] {
        &self.unit_ids
    }

    pub fn report(&self) -> Option<&AppReport> {
        self.report.as_ref()
    }

    pub fn state(&self) -> AppState {
        match (&self.report, self.submitted) {
            (Some(r), _) => r.state,
            (None, true) => AppState::Submitted,
            (None, false) => AppState::Created,
        }
    }

    /// Times the completion callback has fired.
    pub fn completions(&self) -> u32 {
        self.completions
    }

    /// Freezes the task list into an application with ids from `next_unit`.
    fn build(&mut self, next_unit: &mut u64) -> Result<(Application, Vec<Upload>), ModelError> {
        if self.submitted {
            return Err(ModelError::AlreadySubmitted(self.id));
        }
        if self.tasks.is_empty() {
            return Err(ModelError::EmptyApplication);
        }
        let mut app = Application::new(self.id, self.user.clone(), Model::Task);
        let mut uploads = Vec::new();
        for t in &self.tasks {
            let id = UnitId(*next_unit);
            *next_unit += 1;
            let mut u = WorkUnit::new(id, self.id, Model::Task, t.operation.clone(), t.params.clone(), t.cost);
            for (name, data) in &t.inputs {
                u.input_files.push(FileEntry::new(name.clone()));
                uploads.push(Upload { blob: blob_name(self.id, id, FileRole::Input, name), data: data.clone() });
            }
            u.output_files = t.outputs.iter().cloned().map(FileEntry::new).collect();
            self.unit_ids.push(id);
            app.units.push(u);
        }
        self.submitted = true;
        Ok((app, uploads))
    }

    fn deliver(&mut self, report: AppReport) {
        if self.report.is_some() {
            return;
        }
        if let Some(cb) = self.callback.as_mut() {
            cb(&report);
        }
        self.completions += 1;
        self.report = Some(report);
    }
}

// --- Thread model -----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ThreadState {
    Unstarted,
    Started,
    Running,
    Aborted,
    /// Ran to the end.
    Stopped,
}

impl ThreadState {
    pub const ALL: [ThreadState; 5] =
        [ThreadState::Unstarted, ThreadState::Started, ThreadState::Running, ThreadState::Aborted, ThreadState::Stopped];

    pub fn is_terminal(self) -> bool {
        matches!(self, ThreadState::Aborted | ThreadState::Stopped)
    }
}

impl fmt::Display for ThreadState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThreadOp {
    Start,
    Join,
    Abort,
    /// The worker began executing.
    Run,
    /// The unit reached a terminal state remotely.
    Finish(UnitOutcome),
}

impl fmt::Display for ThreadOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThreadOp::Finish(o) => write!(f, "Finish({o:?})"),
            other => fmt::Debug::fmt(other, f),
        }
    }
}

/// The thread lifecycle. `Join` and a pending `Abort` leave the state as is.
pub fn thread_transition(state: ThreadState, op: ThreadOp) -> Option<ThreadState> {
    use ThreadState as S;
    match (state, op) {
        (S::Unstarted, ThreadOp::Start) => Some(S::Started),
        (S::Unstarted, ThreadOp::Abort) => Some(S::Aborted),
        (S::Started | S::Running, ThreadOp::Abort) => Some(state),
        (S::Started, ThreadOp::Run) => Some(S::Running),
        (S::Started | S::Running, ThreadOp::Finish(UnitOutcome::Aborted)) => Some(S::Aborted),
        (S::Started | S::Running, ThreadOp::Finish(_)) => Some(S::Stopped),
        (S::Unstarted, ThreadOp::Join) => None,
        (_, ThreadOp::Join) => Some(state),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JoinOutcome {
    /// Completed; `None` when the unit failed.
    Stopped(Option<ResultData>),
    Aborted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteThread {
    pub unit: UnitId,
    pub operation: String,
    pub params: Params,
    pub cost: u64,
    state: ThreadState,
    result: Option<ResultData>,
    failed: bool,
    abort_requested: bool,
    finished_at: Option<Millis>,
}

impl RemoteThread {
    pub fn new(unit: UnitId, operation: impl Into<String>, params: Params, cost: u64) -> Self {
        Self {
            unit,
            operation: operation.into(),
            params,
            cost,
            state: ThreadState::Unstarted,
            result: None,
            failed: false,
            abort_requested: false,
            finished_at: None,
        }
    }

    pub fn state(&self) -> ThreadState {
        self.state
    }

    pub fn result(&self) -> Option<&ResultData> {
        self.result.as_ref()
    }

    pub fn failed(&self) -> bool {
        self.failed
    }

    pub fn abort_requested(&self) -> bool {
        self.abort_requested
    }

    pub fn finished_at(&self) -> Option<Millis> {
        self.finished_at
    }

    fn apply(&mut self, op: ThreadOp) -> Result<ThreadState, ModelError> {
        let to = thread_transition(self.state, op)
            .ok_or(ModelError::InvalidThreadState { thread: self.unit, state: self.state, op })?;
        self.state = to;
        Ok(to)
    }

    fn to_unit(&self, app: AppId) -> WorkUnit {
        WorkUnit::new(self.unit, app, Model::Thread, self.operation.clone(), self.params.clone(), self.cost)
    }

    /// Outcome of a join if the thread is terminal, `None` if it must wait.
    pub fn join(&self) -> Result<Option<JoinOutcome>, ModelError> {
        thread_transition(self.state, ThreadOp::Join)
            .ok_or(ModelError::InvalidThreadState { thread: self.unit, state: self.state, op: ThreadOp::Join })?;
        Ok(match self.state {
            ThreadState::Stopped => Some(JoinOutcome::Stopped(self.result.clone())),
            ThreadState::Aborted => Some(JoinOutcome::Aborted),
            _ => None,
        })
    }

    fn on_report(&mut self, now: Millis, r: &UnitReport) {
        if self.apply(ThreadOp::Finish(r.outcome)).is_ok() {
            self.result = r.result.clone();
            self.failed = r.outcome == UnitOutcome::Failed;
            self.finished_at = Some(now);
        }
    }
}

// --- Mandelbrot -------------------------------------------------------------

pub const MANDELBROT_WINDOW: (f64, f64, f64, f64) = (-2.5, -1.0, 1.0, 1.0);

/// Grid for `tiles`: rows is the largest divisor `d` with `d * d <= tiles`.
pub fn tile_grid(tiles: u32) -> (u32, u32) {
    let mut rows = 1;
    let mut d = 1;
    while d * d <= tiles {
        if tiles % d == 0 {
            rows = d;
        }
        d += 1;
    }
    (rows, tiles / rows)
}

/// A Mandelbrot rendering split into row-major rectangular tiles, one thread each.
#[derive(Debug, Clone, PartialEq)]
pub struct MandelbrotJob {
    pub width: u32,
    pub height: u32,
    pub max_iter: u32,
    pub rows: u32,
    pub cols: u32,
    pub tiles: Vec<TileWindow>,
}

pub fn mandelbrot_app(width: u32, height: u32, tiles: u32, max_iter: u32) -> Result<MandelbrotJob, ModelError> {
    let bad = ModelError::BadTiling { width, height, tiles };
    if tiles == 0 || width == 0 || height == 0 {
        return Err(bad);
    }
    let (rows, cols) = tile_grid(tiles);
    if width % cols != 0 || height % rows != 0 {
        return Err(bad);
    }
    let (x0, y0, x1, y1) = MANDELBROT_WINDOW;
    let (tw, th) = (width / cols, height / rows);
    let dx = (x1 - x0) / width as f64;
    let dy = (y1 - y0) / height as f64;
    let mut windows = Vec::with_capacity(tiles as usize);
    for r in 0..rows {
        for c in 0..cols {
            let cx0 = x0 + (c * tw) as f64 * dx;
            let cy0 = y0 + (r * th) as f64 * dy;
            windows.push(TileWindow {
                cx0,
                cy0,
                cx1: cx0 + tw as f64 * dx,
                cy1: cy0 + th as f64 * dy,
                width: tw,
                height: th,
                max_iter,
            });
        }
    }
    Ok(MandelbrotJob { width, height, max_iter, rows, cols, tiles: windows })
}

/// Assembled escape counts for the full image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MandelbrotImage {
    pub width: u32,
    pub height: u32,
    pub max_iter: u32,
    pub pixels: Vec<u32>,
    pub histogram: Vec<u64>,
}

impl MandelbrotJob {
    /// One unstarted thread per tile, costed by the registered workload.
    pub fn threads(&self, first_unit: u64, registry: &WorkloadRegistry) -> Vec<RemoteThread> {
        self.tiles
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let params = w.to_params();
                let cost = registry.cost_of(MANDELBROT_TILE, &params).unwrap_or(w.pixels());
                RemoteThread::new(UnitId(first_unit + i as u64), MANDELBROT_TILE, params, cost)
            })
            .collect()
    }

    /// Stitches tile results (in tile order) into the full image.
    pub fn assemble(&self, results: &[ResultData]) -> Option<MandelbrotImage> {
        if results.len() != self.tiles.len() {
            return None;
        }
        let mut pixels = vec![0u32; self.width as usize * self.height as usize];
        for (i, data) in results.iter().enumerate() {
            let tile = TileResult::decode(data)?;
            let w = &self.tiles[i];
            if tile.pixels.len() as u64 != w.pixels() {
                return None;
            }
            let (r, c) = (i as u32 / self.cols, i as u32 % self.cols);
            for ty in 0..w.height {
                let gy = r * w.height + ty;
                let dst = (gy * self.width + c * w.width) as usize;
                let src = (ty * w.width) as usize;
                pixels[dst..dst + w.width as usize].copy_from_slice(&tile.pixels[src..src + w.width as usize]);
            }
        }
        let histogram = histogram(&pixels, self.max_iter);
        Some(MandelbrotImage { width: self.width, height: self.height, max_iter: self.max_iter, pixels, histogram })
    }
}

// --- Client actor -----------------------------------------------------------

/// The client's state on the event loop.
#[derive(Debug)]
pub struct ClientActor {
    pub uri: NodeUri,
    pub master: NodeUri,
    user: String,
    tasks: BTreeMap<AppId, TaskApplication>,
    threads: BTreeMap<UnitId, RemoteThread>,
    thread_app: AppId,
    next_unit: u64,
    next_app: u64,
    last_message_at: Option<Millis>,
}

impl ClientActor {
    pub fn new(uri: NodeUri, master: NodeUri, user: impl Into<String>) -> Self {
        Self {
            uri,
            master,
            user: user.into(),
            tasks: BTreeMap::new(),
            threads: BTreeMap::new(),
            thread_app: AppId(0),
            next_unit: 0,
            next_app: 1,
            last_message_at: None,
        }
    }

    /// Fresh Task-model application handle.
    pub fn new_task_app(&mut self) -> TaskApplication {
        let id = AppId(self.next_app);
        self.next_app += 1;
        TaskApplication::new(id, self.user.clone())
    }

    /// Submits the application; returns the uploads to perform first and the
    /// submission message.
    pub fn submit_tasks(&mut self, mut app: TaskApplication) -> Result<(AppId, Vec<Upload>, Outgoing), ModelError> {
        let (application, uploads) = app.build(&mut self.next_unit)?;
        let id = app.id();
        self.tasks.insert(id, app);
        Ok((id, uploads, Outgoing::new(self.master.clone(), Payload::SubmitApplication(Box::new(application)))))
    }

    pub fn task_app(&self, id: AppId) -> Option<&TaskApplication> {
        self.tasks.get(&id)
    }

    pub fn task_app_mut(&mut self, id: AppId) -> Option<&mut TaskApplication> {
        self.tasks.get_mut(&id)
    }

    pub fn create_thread(&mut self, operation: impl Into<String>, params: Params, cost: u64) -> UnitId {
        let id = UnitId(self.next_unit);
        self.next_unit += 1;
        self.threads.insert(id, RemoteThread::new(id, operation, params, cost));
        id
    }

    /// Adopts prebuilt threads, renumbering them from the client's counter.
    pub fn adopt_threads(&mut self, threads: Vec<RemoteThread>) -> Vec<UnitId> {
        threads.into_iter().map(|t| self.create_thread(t.operation, t.params, t.cost)).collect()
    }

    pub fn thread(&self, id: UnitId) -> Option<&RemoteThread> {
        self.threads.get(&id)
    }

    pub fn threads(&self) -> impl Iterator<Item = &RemoteThread> {
        self.threads.values()
    }

    /// Starts threads in one submission.
    pub fn start_threads(&mut self, ids: &[UnitId]) -> Result<Outgoing, ModelError> {
        for id in ids {
            let t = self.threads.get(id).ok_or(ModelError::UnknownThread(*id))?;
            thread_transition(t.state, ThreadOp::Start)
                .ok_or(ModelError::InvalidThreadState { thread: *id, state: t.state, op: ThreadOp::Start })?;
        }
        if ids.is_empty() {
            return Err(ModelError::EmptyApplication);
        }
        let mut app = Application::new(self.thread_app, self.user.clone(), Model::Thread);
        for id in ids {
            let t = self.threads.get_mut(id).expect("checked");
            t.apply(ThreadOp::Start)?;
            app.units.push(t.to_unit(self.thread_app));
        }
        Ok(Outgoing::new(self.master.clone(), Payload::SubmitApplication(Box::new(app))))
    }

    pub fn start_thread(&mut self, id: UnitId) -> Result<Outgoing, ModelError> {
        self.start_threads(&[id])
    }

    /// Requests an abort. Unstarted threads abort locally with no message.
    pub fn abort_thread(&mut self, id: UnitId) -> Result<Option<Outgoing>, ModelError> {
        let app = self.thread_app;
        let t = self.threads.get_mut(&id).ok_or(ModelError::UnknownThread(id))?;
        let was = t.state;
        t.apply(ThreadOp::Abort)?;
        if was == ThreadState::Unstarted {
            return Ok(None);
        }
        t.abort_requested = true;
        Ok(Some(Outgoing::new(self.master.clone(), Payload::AbortWorkUnit { app, unit: id })))
    }

    pub fn join_thread(&self, id: UnitId) -> Result<Option<JoinOutcome>, ModelError> {
        self.threads.get(&id).ok_or(ModelError::UnknownThread(id))?.join()
    }

    /// Time of the last message received from the master.
    pub fn last_message_at(&self) -> Option<Millis> {
        self.last_message_at
    }

    pub fn handle(&mut self, now: Millis, payload: &Payload) {
        self.last_message_at = Some(now);
        match payload {
            Payload::ApplicationResult(r) => {
                if let Some(app) = self.tasks.get_mut(&r.app) {
                    app.deliver(r.clone());
                }
            }
            Payload::WorkUnitResult(r) => {
                if let Some(t) = self.threads.get_mut(&r.unit) {
                    t.on_report(now, r);
                }
            }
            Payload::ControlAck(Ack { unit: Some(u), event: AckEvent::Started }) => {
                if let Some(t) = self.threads.get_mut(u) {
                    let _ = t.apply(ThreadOp::Run);
                }
            }
            _ => {}
        }
    }

    /// Every submitted task application has reported and every started
    /// thread is terminal.
    pub fn is_idle(&self) -> bool {
        self.tasks.values().all(|a| a.report.is_some())
            && self.threads.values().all(|t| t.state == ThreadState::Unstarted || t.state.is_terminal())
    }
}
