//! Append-only directory store.
//!
//! ```text
//! <dir>/<room>.jsonl    one record per line:
//!                       {"timestamp":..,"room":..,"field":..,"value":..,"src":..}
//! <dir>/batches.jsonl   one commit marker per stored batch:
//!                       {"batch_id":..,"rooms":{"<room>":<record count>,..}}
//! ```
//!
//! A batch is written to the room files first and committed by its marker.
//! On open, room-file lines beyond the committed counts belong to a batch
//! that never committed; a writable store truncates them, a read-only view
//! ignores them.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{check_query, check_records, BatchId, Index, StorageBackend, StoreError};
use crate::gateway::SensorRecord;
use crate::nodes::{Field, RoomId};

const MARKERS: &str = "batches.jsonl";

#[derive(Debug, Serialize, Deserialize)]
struct Marker {
    batch_id: BatchId,
    rooms: BTreeMap<RoomId, usize>,
}

#[derive(Debug, Default)]
struct Loaded {
    index: Index,
    markers_len: u64,
}

#[derive(Debug)]
pub struct LocalStore {
    dir: PathBuf,
    writable: bool,
    state: RwLock<Loaded>,
    writer: Mutex<()>,
}

fn room_path(dir: &Path, room: RoomId) -> PathBuf {
    dir.join(format!("{room}.jsonl"))
}

/// Complete (newline-terminated) lines with the byte offset just past each.
fn complete_lines(text: &str) -> Vec<(&str, usize)> {
    let mut out = Vec::new();
    let mut end = 0;
    for line in text.split_inclusive('\n') {
        if !line.ends_with('\n') {
            break;
        }
        end += line.len();
        out.push((&line[..line.len() - 1], end));
    }
    out
}

fn read_or_empty(path: &Path) -> Result<String, StoreError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(String::new()),
        Err(e) => Err(e.into()),
    }
}

fn corrupt(path: &Path, message: impl Into<String>) -> StoreError {
    StoreError::Corrupt { path: path.display().to_string(), message: message.into() }
}

fn truncate(path: &Path, len: usize) -> Result<(), StoreError> {
    OpenOptions::new().write(true).open(path)?.set_len(len as u64)?;
    Ok(())
}

fn load(dir: &Path, repair: bool) -> Result<Loaded, StoreError> {
    let markers_path = dir.join(MARKERS);
    let text = read_or_empty(&markers_path)?;
    let lines = complete_lines(&text);
    let committed_len = lines.last().map_or(0, |l| l.1);
    if repair && committed_len < text.len() {
        truncate(&markers_path, committed_len)?;
    }
    let mut markers = Vec::with_capacity(lines.len());
    for (i, (line, _)) in lines.iter().enumerate() {
        let m: Marker = serde_json::from_str(line).map_err(|e| corrupt(&markers_path, format!("line {}: {e}", i + 1)))?;
        markers.push(m);
    }

    let mut records: BTreeMap<RoomId, std::vec::IntoIter<SensorRecord>> = BTreeMap::new();
    for room in RoomId::ALL {
        let expected: usize = markers.iter().filter_map(|m| m.rooms.get(&room)).sum();
        let path = room_path(dir, room);
        let text = read_or_empty(&path)?;
        let lines = complete_lines(&text);
        if lines.len() < expected {
            return Err(corrupt(&path, format!("{} committed records, {} present", expected, lines.len())));
        }
        let keep_len = if expected == 0 { 0 } else { lines[expected - 1].1 };
        if repair && keep_len < text.len() {
            truncate(&path, keep_len)?;
        }
        let mut parsed = Vec::with_capacity(expected);
        for (i, (line, _)) in lines[..expected].iter().enumerate() {
            let r: SensorRecord = serde_json::from_str(line).map_err(|e| corrupt(&path, format!("line {}: {e}", i + 1)))?;
            if r.room != room {
                return Err(corrupt(&path, format!("line {}: record for {}", i + 1, r.room)));
            }
            parsed.push(r);
        }
        records.insert(room, parsed.into_iter());
    }

    let mut index = Index::default();
    for m in &markers {
        let mut batch = Vec::new();
        for (room, &n) in &m.rooms {
            batch.extend(records.get_mut(room).expect("every room loaded").by_ref().take(n));
        }
        index.apply(&batch, m.batch_id);
    }
    Ok(Loaded { index, markers_len: committed_len as u64 })
}

impl LocalStore {
    /// Opens (creating if needed) a store for writing. Uncommitted tails are
    /// removed.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let loaded = load(&dir, true)?;
        Ok(Self { dir, writable: true, state: RwLock::new(loaded), writer: Mutex::new(()) })
    }

    /// Opens an existing store for reading only. Each call re-reads the
    /// directory if another process committed batches since.
    pub fn open_read_only(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        if !dir.is_dir() {
            return Err(StoreError::Io(format!("{} is not a directory", dir.display())));
        }
        let loaded = load(&dir, false)?;
        Ok(Self { dir, writable: false, state: RwLock::new(loaded), writer: Mutex::new(()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.state.read().expect("state lock").index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn refresh(&self) -> Result<(), StoreError> {
        if self.writable {
            return Ok(());
        }
        let on_disk = match fs::metadata(self.dir.join(MARKERS)) {
            Ok(m) => m.len(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => 0,
            Err(e) => return Err(e.into()),
        };
        if on_disk != self.state.read().expect("state lock").markers_len {
            *self.state.write().expect("state lock") = load(&self.dir, false)?;
        }
        Ok(())
    }

    fn append(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let mut f: File = OpenOptions::new().create(true).append(true).open(path)?;
        f.write_all(bytes)?;
        Ok(())
    }
}

impl StorageBackend for LocalStore {
    fn insert_batch(&self, records: &[SensorRecord], batch_id: BatchId) -> Result<usize, StoreError> {
        if !self.writable {
            return Err(StoreError::ReadOnly);
        }
        check_records(records)?;
        let _guard = self.writer.lock().expect("writer lock");
        if self.state.read().expect("state lock").index.has_batch(batch_id) {
            return Ok(0);
        }
        let mut per_room: BTreeMap<RoomId, Vec<u8>> = BTreeMap::new();
        let mut counts: BTreeMap<RoomId, usize> = BTreeMap::new();
        for r in records {
            let buf = per_room.entry(r.room).or_default();
            serde_json::to_writer(&mut *buf, r).expect("record serializes");
            buf.push(b'\n');
            *counts.entry(r.room).or_default() += 1;
        }
        for (room, bytes) in &per_room {
            Self::append(&room_path(&self.dir, *room), bytes)?;
        }
        let mut marker = serde_json::to_vec(&Marker { batch_id, rooms: counts }).expect("marker serializes");
        marker.push(b'\n');
        Self::append(&self.dir.join(MARKERS), &marker)?;

        let mut state = self.state.write().expect("state lock");
        state.markers_len += marker.len() as u64;
        state.index.apply(records, batch_id);
        Ok(records.len())
    }

    fn query(&self, room: RoomId, field: Field, from: u64, to: u64) -> Result<Vec<SensorRecord>, StoreError> {
        check_query(room, field, from, to)?;
        self.refresh()?;
        Ok(self.state.read().expect("state lock").index.query(room, field, from, to))
    }

    fn list_rooms(&self) -> Result<Vec<RoomId>, StoreError> {
        self.refresh()?;
        Ok(self.state.read().expect("state lock").index.rooms())
    }

    fn list_fields(&self, room: RoomId) -> Result<Vec<Field>, StoreError> {
        self.refresh()?;
        Ok(self.state.read().expect("state lock").index.fields(room))
    }
}
