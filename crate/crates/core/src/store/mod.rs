//! Time-series persistence and retrieval.
//!
//! Every backend stores [`SensorRecord`]s grouped per room and answers
//! inclusive time-range queries for one `(room, field)` stream. Records
//! with equal timestamps come back in insertion order.

mod export;
mod http;
mod local;
mod remote;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::RwLock;

use thiserror::Error;

use crate::gateway::SensorRecord;
use crate::nodes::{Field, RoomId};

pub use export::{export, ExportFormat, SeriesPoint};
pub use http::{serve, HttpServer};
pub use local::LocalStore;
pub use remote::{MockServer, RemoteStoreClient, RetryPolicy, STORE_URL_ENV};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("store unavailable after {attempts} attempt(s): {message}")]
    StoreUnavailable { attempts: u32, message: String },
    #[error("unknown room {0:?}")]
    UnknownRoom(String),
    #[error("unknown field {field:?} for room {room:?}")]
    UnknownField { room: String, field: String },
    #[error("invalid range: from {from} > to {to}")]
    InvalidRange { from: u64, to: u64 },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("corrupt store file {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("store is read-only")]
    ReadOnly,
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

pub type BatchId = u64;

pub trait StorageBackend: Send + Sync {
    /// Stores a batch. Re-sending a batch id that was already stored inserts
    /// nothing and returns 0.
    fn insert_batch(&self, records: &[SensorRecord], batch_id: BatchId) -> Result<usize, StoreError>;

    /// Records of one stream with `from <= timestamp <= to`, ascending.
    fn query(&self, room: RoomId, field: Field, from: u64, to: u64) -> Result<Vec<SensorRecord>, StoreError>;

    /// Rooms holding at least one record.
    fn list_rooms(&self) -> Result<Vec<RoomId>, StoreError>;

    /// Fields of `room` holding at least one record, in wire order.
    fn list_fields(&self, room: RoomId) -> Result<Vec<Field>, StoreError>;
}

pub fn parse_room(name: &str) -> Result<RoomId, StoreError> {
    name.parse().map_err(|_| StoreError::UnknownRoom(name.to_string()))
}

pub fn parse_field(room: RoomId, name: &str) -> Result<Field, StoreError> {
    name.parse::<Field>()
        .ok()
        .filter(|f| room.has_field(*f))
        .ok_or_else(|| StoreError::UnknownField { room: room.to_string(), field: name.to_string() })
}

pub(crate) fn check_query(room: RoomId, field: Field, from: u64, to: u64) -> Result<(), StoreError> {
    if !room.has_field(field) {
        return Err(StoreError::UnknownField { room: room.to_string(), field: field.to_string() });
    }
    if from > to {
        return Err(StoreError::InvalidRange { from, to });
    }
    Ok(())
}

pub(crate) fn check_records(records: &[SensorRecord]) -> Result<(), StoreError> {
    for r in records {
        if !r.room.has_field(r.field) {
            return Err(StoreError::InvalidRecord(format!("{} is not a {} field", r.field, r.room)));
        }
        if !r.field.unit().contains(r.value) {
            return Err(StoreError::InvalidRecord(format!("{} out of range for {}", r.value, r.field)));
        }
    }
    Ok(())
}

/// In-memory query index shared by the backends.
#[derive(Debug, Clone, Default)]
pub(crate) struct Index {
    series: BTreeMap<(RoomId, Field), Vec<SensorRecord>>,
    batches: BTreeSet<BatchId>,
}

impl Index {
    pub fn has_batch(&self, id: BatchId) -> bool {
        self.batches.contains(&id)
    }

    pub fn apply(&mut self, records: &[SensorRecord], id: BatchId) {
        self.batches.insert(id);
        for r in records {
            let v = self.series.entry((r.room, r.field)).or_default();
            let at = v.partition_point(|x| x.timestamp <= r.timestamp);
            v.insert(at, r.clone());
        }
    }

    pub fn query(&self, room: RoomId, field: Field, from: u64, to: u64) -> Vec<SensorRecord> {
        let Some(v) = self.series.get(&(room, field)) else { return Vec::new() };
        let lo = v.partition_point(|r| r.timestamp < from);
        let hi = v.partition_point(|r| r.timestamp <= to);
        v[lo..hi].to_vec()
    }

    pub fn rooms(&self) -> Vec<RoomId> {
        let present: BTreeSet<RoomId> = self.series.keys().map(|(r, _)| *r).collect();
        present.into_iter().collect()
    }

    pub fn fields(&self, room: RoomId) -> Vec<Field> {
        room.fields().iter().copied().filter(|f| self.series.contains_key(&(room, *f))).collect()
    }

    pub fn len(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }
}

/// Volatile backend, also the storage behind [`MockServer`].
#[derive(Debug, Default)]
pub struct MemoryStore {
    index: RwLock<Index>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("index lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl StorageBackend for MemoryStore {
    fn insert_batch(&self, records: &[SensorRecord], batch_id: BatchId) -> Result<usize, StoreError> {
        check_records(records)?;
        let mut index = self.index.write().expect("index lock");
        if index.has_batch(batch_id) {
            return Ok(0);
        }
        index.apply(records, batch_id);
        Ok(records.len())
    }

    fn query(&self, room: RoomId, field: Field, from: u64, to: u64) -> Result<Vec<SensorRecord>, StoreError> {
        check_query(room, field, from, to)?;
        Ok(self.index.read().expect("index lock").query(room, field, from, to))
    }

    fn list_rooms(&self) -> Result<Vec<RoomId>, StoreError> {
        Ok(self.index.read().expect("index lock").rooms())
    }

    fn list_fields(&self, room: RoomId) -> Result<Vec<Field>, StoreError> {
        Ok(self.index.read().expect("index lock").fields(room))
    }
}
