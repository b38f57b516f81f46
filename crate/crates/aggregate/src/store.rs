//! Append-only event log with in-memory indexes.
//!
//! Every accepted event is written to the log file as its raw canonical line
//! and kept in memory in arrival order. Indexes by (publisher, kind) and by
//! (kind, timestamp) are rebuilt from the file on open.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use smartrescue_core::model::{SensorEvent, SensorKind};
use smartrescue_core::protocol::WireEvent;

pub const DEFAULT_STORE_CAP: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store file {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("store capacity must be at least 1")]
    ZeroCapacity,
}

#[derive(Debug)]
pub struct StoredEvent {
    /// Position in arrival order, starting at 0; never reused.
    pub index: u64,
    pub event: SensorEvent,
    /// The exact bytes the publisher sent.
    pub raw: Arc<str>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AppendOutcome {
    Stored(u64),
    Duplicate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StoreCounters {
    pub stored: u64,
    pub appended: u64,
    pub duplicates: u64,
    pub evicted: u64,
    /// Unreadable lines skipped while loading the log.
    pub corrupt_lines: u64,
}

/// (timestamp, seq, index) orders events by recency.
type TimeKey = (i64, u64, u64);

pub struct EventStore {
    path: Option<PathBuf>,
    file: Option<BufWriter<File>>,
    file_lines: u64,
    cap: usize,
    events: VecDeque<Arc<StoredEvent>>,
    next_index: u64,
    ids: HashMap<String, u64>,
    by_publisher_kind: HashMap<String, HashMap<SensorKind, BTreeSet<TimeKey>>>,
    by_kind_time: HashMap<SensorKind, BTreeSet<TimeKey>>,
    counters: StoreCounters,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl EventStore {
    /// A store that keeps nothing on disk.
    pub fn in_memory(cap: usize) -> Result<Self, StoreError> {
        if cap == 0 {
            return Err(StoreError::ZeroCapacity);
        }
        Ok(Self {
            path: None,
            file: None,
            file_lines: 0,
            cap,
            events: VecDeque::new(),
            next_index: 0,
            ids: HashMap::new(),
            by_publisher_kind: HashMap::new(),
            by_kind_time: HashMap::new(),
            counters: StoreCounters::default(),
        })
    }

    /// Open or create the log at `path` and replay it into memory. A log
    /// holding more than `cap` events is compacted down to the newest `cap`.
    pub fn open(path: impl AsRef<Path>, cap: usize) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut store = Self::in_memory(cap)?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err(&path))?;
        }
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io_err(&path))?);
            for line in reader.lines() {
                let line = line.map_err(io_err(&path))?;
                store.file_lines += 1;
                if line.trim().is_empty() {
                    continue;
                }
                match WireEvent::from_raw(&line) {
                    Ok(wire) => {
                        store.insert(wire);
                    }
                    Err(e) => {
                        store.counters.corrupt_lines += 1;
                        tracing::warn!(target: "smartrescue::aggregate", error = %e, "skipping unreadable store line");
                    }
                }
            }
        }
        // replaying is not new ingest
        store.counters.appended = 0;
        store.counters.duplicates = 0;
        store.counters.evicted = 0;
        store.path = Some(path.clone());
        if store.file_lines > store.events.len() as u64 {
            store.compact()?;
        } else {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(io_err(&path))?;
            store.file = Some(BufWriter::new(file));
        }
        Ok(store)
    }

    /// Rewrite the log so it holds exactly the events kept in memory.
    pub fn compact(&mut self) -> Result<(), StoreError> {
        let Some(path) = self.path.clone() else {
            return Ok(());
        };
        self.file = None;
        let tmp = path.with_extension("compact");
        {
            let mut w = BufWriter::new(File::create(&tmp).map_err(io_err(&tmp))?);
            for e in &self.events {
                w.write_all(e.raw.as_bytes()).map_err(io_err(&tmp))?;
                w.write_all(b"\n").map_err(io_err(&tmp))?;
            }
            w.flush().map_err(io_err(&tmp))?;
        }
        std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
        self.file_lines = self.events.len() as u64;
        let file = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        self.file = Some(BufWriter::new(file));
        tracing::info!(target: "smartrescue::aggregate", events = self.events.len(), "store compacted");
        Ok(())
    }

    /// Persist and index one event. Events whose id is already stored are
    /// counted and dropped.
    pub fn append(&mut self, wire: &WireEvent) -> Result<AppendOutcome, StoreError> {
        if self.ids.contains_key(&wire.event().event_id) {
            self.counters.duplicates += 1;
            return Ok(AppendOutcome::Duplicate);
        }
        if let (Some(file), Some(path)) = (self.file.as_mut(), self.path.as_ref()) {
            file.write_all(wire.raw().as_bytes()).map_err(io_err(path))?;
            file.write_all(b"\n").map_err(io_err(path))?;
            file.flush().map_err(io_err(path))?;
            self.file_lines += 1;
        }
        let index = self.insert(wire.clone());
        self.counters.appended += 1;
        if self.path.is_some() && self.file_lines > 2 * self.cap as u64 {
            self.compact()?;
        }
        Ok(AppendOutcome::Stored(index))
    }

    fn insert(&mut self, wire: WireEvent) -> u64 {
        if self.ids.contains_key(&wire.event().event_id) {
            self.counters.duplicates += 1;
            return self.ids[&wire.event().event_id];
        }
        let index = self.next_index;
        self.next_index += 1;
        let raw = wire.raw_shared();
        let event = wire.into_event();
        let key = (event.timestamp_ms, event.seq, index);
        self.ids.insert(event.event_id.clone(), index);
        self.by_publisher_kind
            .entry(event.publisher_id.clone())
            .or_default()
            .entry(event.kind)
            .or_default()
            .insert(key);
        self.by_kind_time.entry(event.kind).or_default().insert(key);
        self.events.push_back(Arc::new(StoredEvent { index, event, raw }));
        while self.events.len() > self.cap {
            self.evict_oldest();
        }
        self.counters.stored = self.events.len() as u64;
        index
    }

    fn evict_oldest(&mut self) {
        let Some(old) = self.events.pop_front() else {
            return;
        };
        let e = &old.event;
        let key = (e.timestamp_ms, e.seq, old.index);
        self.ids.remove(&e.event_id);
        if let Some(kinds) = self.by_publisher_kind.get_mut(&e.publisher_id) {
            if let Some(set) = kinds.get_mut(&e.kind) {
                set.remove(&key);
                if set.is_empty() {
                    kinds.remove(&e.kind);
                }
            }
            if kinds.is_empty() {
                self.by_publisher_kind.remove(&e.publisher_id);
            }
        }
        if let Some(set) = self.by_kind_time.get_mut(&e.kind) {
            set.remove(&key);
        }
        self.counters.evicted += 1;
        if self.counters.evicted == 1 || self.counters.evicted.is_multiple_of(10_000) {
            tracing::warn!(target: "smartrescue::aggregate", evicted = self.counters.evicted, cap = self.cap, "store full, evicting oldest events");
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn counters(&self) -> StoreCounters {
        self.counters
    }

    fn by_index(&self, index: u64) -> Option<&Arc<StoredEvent>> {
        let first = self.events.front()?.index;
        self.events.get(index.checked_sub(first)? as usize)
    }

    pub fn get(&self, event_id: &str) -> Option<&Arc<StoredEvent>> {
        self.by_index(*self.ids.get(event_id)?)
    }

    /// All stored events in arrival order.
    pub fn iter(&self) -> impl Iterator<Item = &Arc<StoredEvent>> {
        self.events.iter()
    }

    pub fn publishers(&self) -> impl Iterator<Item = &str> {
        self.by_publisher_kind.keys().map(String::as_str)
    }

    /// Kinds stored for a publisher with the newest event of each, where
    /// newest means greatest (timestamp, seq).
    pub fn latest(&self, publisher_id: &str) -> Vec<Arc<StoredEvent>> {
        let Some(kinds) = self.by_publisher_kind.get(publisher_id) else {
            return Vec::new();
        };
        let mut out: Vec<_> = kinds
            .values()
            .filter_map(|set| set.last())
            .filter_map(|(_, _, i)| self.by_index(*i).cloned())
            .collect();
        out.sort_by_key(|e| e.event.kind);
        out
    }

    /// Newest event from a publisher that carries an activity estimate.
    pub fn latest_with_activity(&self, publisher_id: &str) -> Option<Arc<StoredEvent>> {
        let kinds = self.by_publisher_kind.get(publisher_id)?;
        kinds
            .values()
            .filter_map(|set| {
                set.iter()
                    .rev()
                    .filter_map(|(_, _, i)| self.by_index(*i))
                    .find(|e| e.event.activity.is_some())
            })
            .max_by_key(|e| (e.event.timestamp_ms, e.event.seq))
            .cloned()
    }

    /// One publisher's events of one kind with `from <= timestamp <= to`, by
    /// ascending (timestamp, seq).
    pub fn range(&self, publisher_id: &str, kind: SensorKind, from_ms: i64, to_ms: i64) -> Vec<Arc<StoredEvent>> {
        let Some(set) = self.by_publisher_kind.get(publisher_id).and_then(|k| k.get(&kind)) else {
            return Vec::new();
        };
        set.range((from_ms, 0, 0)..=(to_ms, u64::MAX, u64::MAX))
            .filter_map(|(_, _, i)| self.by_index(*i).cloned())
            .collect()
    }

    /// Every event of one kind with `from <= timestamp <= to`.
    pub fn kind_range(&self, kind: SensorKind, from_ms: i64, to_ms: i64) -> Vec<Arc<StoredEvent>> {
        let Some(set) = self.by_kind_time.get(&kind) else {
            return Vec::new();
        };
        set.range((from_ms, 0, 0)..=(to_ms, u64::MAX, u64::MAX))
            .filter_map(|(_, _, i)| self.by_index(*i).cloned())
            .collect()
    }
}
