//! Emulated blob storage and notification queues.
//!
//! Blobs carry file contents; a FIFO queue per container carries a `Start` and
//! an `End` notice around every transfer. The channel controller hands out
//! time-limited connection strings, and the handler operations move single
//! files or collections between a local file map and the store.

use crate::clock::Millis;
use crate::work::{AppId, UnitId};
use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use sha2::{Digest, Sha256};

pub const DEFAULT_TTL: Millis = 3_600_000;

pub type ContentHash = [u8; 32];

pub fn content_hash(data: &[u8]) -> ContentHash {
    Sha256::digest(data).into()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StorageError {
    #[error("unknown storage account `{0}`")]
    UnknownAccount(String),
    #[error("connection string for `{0}` rejected: bad account key")]
    Unauthorized(String),
    #[error("connection string expired at {expiry} ms (now {now} ms)")]
    Expired { expiry: Millis, now: Millis },
    #[error("blob `{container}/{name}` not found")]
    NotFound { container: String, name: String },
    #[error("local file `{0}` not found")]
    LocalNotFound(String),
    #[error("storage service unavailable")]
    StorageUnavailable,
}

/// Where a file sits relative to the unit that uses it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileRole {
    Input,
    Output,
}

/// Blob naming scheme: `<app_id>/<unit_id>/<in|out>/<filename>`.
pub fn blob_name(app: AppId, unit: UnitId, role: FileRole, file: &str) -> String {
    let r = match role {
        FileRole::Input => "in",
        FileRole::Output => "out",
    };
    format!("{}/{}/{}/{}", app.0, unit.0, r, file)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blob {
    pub data: Vec<u8>,
    pub hash: ContentHash,
    pub created_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlobRef {
    pub container: String,
    pub name: String,
    pub hash: ContentHash,
}

#[derive(Debug, Clone, Default)]
pub struct BlobStore {
    containers: BTreeMap<String, BTreeMap<String, Blob>>,
}

impl BlobStore {
    pub fn create_container(&mut self, container: &str) -> bool {
        if self.containers.contains_key(container) {
            return false;
        }
        self.containers.insert(container.to_string(), BTreeMap::new());
        true
    }

    pub fn has_container(&self, container: &str) -> bool {
        self.containers.contains_key(container)
    }

    pub fn put(&mut self, container: &str, name: &str, data: Vec<u8>, at: Millis) -> ContentHash {
        let hash = content_hash(&data);
        self.containers
            .entry(container.to_string())
            .or_default()
            .insert(name.to_string(), Blob { data, hash, created_at: at });
        hash
    }

    pub fn get(&self, container: &str, name: &str) -> Option<&Blob> {
        self.containers.get(container)?.get(name)
    }

    pub fn contains(&self, container: &str, name: &str) -> bool {
        self.get(container, name).is_some()
    }

    pub fn containers(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, Blob>)> {
        self.containers.iter().map(|(k, v)| (k.as_str(), v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TransferId(pub u64);

impl fmt::Display for TransferId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Start,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Upload,
    Download,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferNotice {
    pub transfer: TransferId,
    pub file: String,
    pub phase: Phase,
    pub direction: Direction,
    pub at: Millis,
}

impl fmt::Display for TransferNotice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:?} {:?} {}", self.transfer, self.direction, self.phase, self.file)
    }
}

#[derive(Debug, Clone, Default)]
pub struct NotificationQueue {
    items: VecDeque<TransferNotice>,
}

impl NotificationQueue {
    pub fn push(&mut self, n: TransferNotice) {
        self.items.push_back(n);
    }

    pub fn pop(&mut self) -> Option<TransferNotice> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransferNotice> {
        self.items.iter()
    }
}

/// Scoped credential for one container.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionString {
    pub account: String,
    pub key: String,
    pub container: String,
    pub expiry: Millis,
}

impl fmt::Display for ConnectionString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "DefaultEndpointsProtocol=https;AccountName={};Container={};Expiry={}",
            self.account, self.container, self.expiry
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Downloaded {
    pub transfer: TransferId,
    pub data: Vec<u8>,
}

/// Client-side files a handler reads uploads from and writes downloads into.
pub type LocalFiles = BTreeMap<String, Vec<u8>>;

#[derive(Debug, Clone)]
pub struct Storage {
    accounts: BTreeMap<String, String>,
    blobs: BlobStore,
    queues: BTreeMap<String, NotificationQueue>,
    history: Vec<TransferNotice>,
    next_transfer: u64,
    available: bool,
    ttl: Millis,
}

impl Default for Storage {
    fn default() -> Self {
        Self::new()
    }
}

impl Storage {
    pub fn new() -> Self {
        Self {
            accounts: BTreeMap::new(),
            blobs: BlobStore::default(),
            queues: BTreeMap::new(),
            history: Vec::new(),
            next_transfer: 0,
            available: true,
            ttl: DEFAULT_TTL,
        }
    }

    pub fn with_ttl(mut self, ttl: Millis) -> Self {
        self.ttl = ttl;
        self
    }

    pub fn add_account(&mut self, name: impl Into<String>, key: impl Into<String>) {
        self.accounts.insert(name.into(), key.into());
    }

    pub fn set_available(&mut self, available: bool) {
        self.available = available;
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    pub fn blobs_mut(&mut self) -> Result<&mut BlobStore, StorageError> {
        if !self.available {
            return Err(StorageError::StorageUnavailable);
        }
        Ok(&mut self.blobs)
    }

    /// Issues a connection string valid for the configured TTL.
    pub fn open_channel(&mut self, account: &str, container: &str, now: Millis) -> Result<ConnectionString, StorageError> {
        let key = self.accounts.get(account).ok_or_else(|| StorageError::UnknownAccount(account.to_string()))?;
        self.blobs.create_container(container);
        self.queues.entry(container.to_string()).or_default();
        Ok(ConnectionString {
            account: account.to_string(),
            key: key.clone(),
            container: container.to_string(),
            expiry: now + self.ttl,
        })
    }

    fn check(&self, conn: &ConnectionString, now: Millis) -> Result<(), StorageError> {
        match self.accounts.get(&conn.account) {
            None => return Err(StorageError::UnknownAccount(conn.account.clone())),
            Some(k) if *k != conn.key => return Err(StorageError::Unauthorized(conn.account.clone())),
            Some(_) => {}
        }
        if now > conn.expiry {
            return Err(StorageError::Expired { expiry: conn.expiry, now });
        }
        if !self.available {
            return Err(StorageError::StorageUnavailable);
        }
        Ok(())
    }

    fn notify(&mut self, container: &str, transfer: TransferId, file: &str, phase: Phase, direction: Direction, at: Millis) {
        let notice = TransferNotice { transfer, file: file.to_string(), phase, direction, at };
        self.history.push(notice.clone());
        self.queues.entry(container.to_string()).or_default().push(notice);
    }

    fn next_id(&mut self) -> TransferId {
        let id = TransferId(self.next_transfer);
        self.next_transfer += 1;
        id
    }

    /// Start notice, blob write, End notice.
    pub fn upload_file(&mut self, conn: &ConnectionString, name: &str, data: &[u8], now: Millis) -> Result<TransferId, StorageError> {
        self.check(conn, now)?;
        let id = self.next_id();
        self.notify(&conn.container, id, name, Phase::Start, Direction::Upload, now);
        self.blobs.put(&conn.container, name, data.to_vec(), now);
        self.notify(&conn.container, id, name, Phase::End, Direction::Upload, now);
        Ok(id)
    }

    pub fn download_file(&mut self, conn: &ConnectionString, name: &str, now: Millis) -> Result<Downloaded, StorageError> {
        self.check(conn, now)?;
        let data = self
            .blobs
            .get(&conn.container, name)
            .ok_or_else(|| StorageError::NotFound { container: conn.container.clone(), name: name.to_string() })?
            .data
            .clone();
        let id = self.next_id();
        self.notify(&conn.container, id, name, Phase::Start, Direction::Download, now);
        self.notify(&conn.container, id, name, Phase::End, Direction::Download, now);
        Ok(Downloaded { transfer: id, data })
    }

    /// Moves each named file in list order; failures are reported per file.
    pub fn transfer_collection(
        &mut self,
        conn: &ConnectionString,
        names: &[String],
        direction: Direction,
        local: &mut LocalFiles,
        now: Millis,
    ) -> Vec<Result<TransferId, StorageError>> {
        names
            .iter()
            .map(|name| match direction {
                Direction::Upload => {
                    let data = local.get(name).ok_or_else(|| StorageError::LocalNotFound(name.clone()))?.clone();
                    self.upload_file(conn, name, &data, now)
                }
                Direction::Download => {
                    let d = self.download_file(conn, name, now)?;
                    local.insert(name.clone(), d.data);
                    Ok(d.transfer)
                }
            })
            .collect()
    }

    pub fn queue(&self, container: &str) -> Option<&NotificationQueue> {
        self.queues.get(container)
    }

    /// Removes and returns every pending notice of a container's queue.
    pub fn drain_notices(&mut self, container: &str) -> Vec<TransferNotice> {
        match self.queues.get_mut(container) {
            Some(q) => core::iter::from_fn(|| q.pop()).collect(),
            None => Vec::new(),
        }
    }

    /// Every notice ever emitted, in emission order.
    pub fn history(&self) -> &[TransferNotice] {
        &self.history
    }
}
