//! Capture of function invocations and data accesses.
//!
//! Reads and invocations go through a bounded in-memory [`RingBuffer`] and may
//! be lost on overflow or crash. Writes are handed over by the engine at
//! commit time, while the committing transaction still holds its latch, and
//! are kept in a separate lossless queue. A background [`export`] loop drains
//! both into an append-only analytical sink, deduplicating re-executions.

pub mod export;
pub mod query;
mod ring;

use std::collections::BTreeMap;
use std::io;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

pub use ring::RingBuffer;

use crate::engine::TableSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventType {
    Insert,
    Delete,
    Update,
    Read,
}

impl EventType {
    pub fn is_write(self) -> bool {
        !matches!(self, EventType::Read)
    }
}

/// One row of the `FunctionInvocations` table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionInvocationEvent {
    pub func_id: String,
    pub timestamp: u64,
    pub function_name: String,
    pub workflow_name: String,
    pub workflow_id: String,
}

/// One row of a `TableEvents` table. `record_data` holds the full row image
/// for writes (pre-image for deletes) and the primary key for reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEvent {
    pub func_id: String,
    pub timestamp: u64,
    pub event_type: EventType,
    pub query: String,
    pub record_data: Map<String, Json>,
}

/// Emitted once per committed traced transaction; a read whose `func_id` has
/// no commit marker came from a transaction that never committed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitMarker {
    pub func_id: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TraceRecord {
    Invocation(FunctionInvocationEvent),
    Table { table: String, dedup: String, event: TableEvent },
    Commit(CommitMarker),
}

#[derive(Debug, Clone)]
pub struct TracerConfig {
    pub capacity: usize,
    pub spill_path: Option<PathBuf>,
    /// Producers wake the exporter once this many entries are buffered.
    pub batch_hint: usize,
}

impl Default for TracerConfig {
    fn default() -> Self {
        TracerConfig { capacity: 65_536, spill_path: None, batch_hint: 8_192 }
    }
}

#[derive(Debug, Default)]
struct Catalog {
    tables: BTreeMap<String, Vec<String>>,
    version: u64,
}

#[derive(Debug)]
pub struct Tracer {
    ring: Mutex<RingBuffer<TraceRecord>>,
    committed: Mutex<Vec<TraceRecord>>,
    catalog: Mutex<Catalog>,
    wake: Condvar,
    wake_lock: Mutex<()>,
    batch_hint: usize,
}

fn dedup_key(parts: &[&str]) -> String {
    parts.join("\u{1f}")
}

impl Tracer {
    pub fn new(config: TracerConfig) -> io::Result<Self> {
        let ring = match &config.spill_path {
            Some(p) => RingBuffer::with_spill(config.capacity, p)?,
            None => RingBuffer::new(config.capacity),
        };
        Ok(Tracer {
            ring: Mutex::new(ring),
            committed: Mutex::new(Vec::new()),
            catalog: Mutex::new(Catalog::default()),
            wake: Condvar::new(),
            wake_lock: Mutex::new(()),
            batch_hint: config.batch_hint.max(1),
        })
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self::new(TracerConfig { capacity, ..Default::default() }).expect("in-memory tracer")
    }

    pub(crate) fn register_table(&self, schema: &TableSchema) {
        if schema.is_system() {
            return;
        }
        let mut c = self.catalog.lock();
        if c.tables.insert(schema.name.clone(), schema.primary_key.clone()).is_none() {
            c.version += 1;
        }
    }

    /// Table name to primary key columns, plus a version that changes
    /// whenever a table is added.
    pub fn catalog(&self) -> (BTreeMap<String, Vec<String>>, u64) {
        let c = self.catalog.lock();
        (c.tables.clone(), c.version)
    }

    fn push(&self, record: TraceRecord) {
        let len = {
            let mut ring = self.ring.lock();
            ring.push(record);
            ring.len()
        };
        if len == self.batch_hint {
            self.wake.notify_all();
        }
    }

    pub fn capture_invocation(&self, event: FunctionInvocationEvent) {
        self.push(TraceRecord::Invocation(event));
    }

    /// Enqueues one read event per retrieved row. `seq` numbers the
    /// executions of `statement` within the current attempt, so a
    /// deterministic re-execution produces identical dedup keys.
    pub(crate) fn capture_reads(&self, table: &str, statement: &str, seq: u32, events: Vec<TableEvent>) {
        let seq = seq.to_string();
        for event in events {
            let pk = Json::Object(event.record_data.clone()).to_string();
            let dedup = dedup_key(&["r", table, &event.func_id, statement, &seq, &pk]);
            self.push(TraceRecord::Table { table: table.to_owned(), dedup, event });
        }
    }

    pub(crate) fn publish_commit(&self, func_id: &str, timestamp: u64, writes: Vec<(String, TableEvent)>) {
        let ts = timestamp.to_string();
        let mut committed = self.committed.lock();
        for (i, (table, event)) in writes.into_iter().enumerate() {
            let dedup = dedup_key(&["w", &table, &ts, &i.to_string()]);
            committed.push(TraceRecord::Table { table, dedup, event });
        }
        committed.push(TraceRecord::Commit(CommitMarker { func_id: func_id.to_owned(), timestamp }));
    }

    /// Entries dropped by the ring buffer so far.
    pub fn dropped(&self) -> u64 {
        self.ring.lock().dropped()
    }

    /// Entries waiting for export.
    pub fn pending(&self) -> usize {
        self.ring.lock().len() + self.committed.lock().len()
    }

    /// Removes up to `max` entries: committed writes first, then the ring.
    pub fn drain(&self, max: usize) -> Vec<TraceRecord> {
        let mut out = {
            let mut committed = self.committed.lock();
            let n = committed.len().min(max);
            committed.drain(..n).collect::<Vec<_>>()
        };
        if out.len() < max {
            out.extend(self.ring.lock().drain(max - out.len()));
        }
        out
    }

    /// Blocks until the batch hint is reached or `timeout` passes.
    pub(crate) fn wait(&self, timeout: std::time::Duration) {
        let mut g = self.wake_lock.lock();
        if self.ring.lock().len() >= self.batch_hint {
            return;
        }
        self.wake.wait_for(&mut g, timeout);
    }

    pub(crate) fn wake_exporter(&self) {
        self.wake.notify_all();
    }
}

pub type SharedTracer = Arc<Tracer>;

#[cfg(test)]
mod tests {
    use super::*;

    fn inv(id: &str) -> FunctionInvocationEvent {
        FunctionInvocationEvent {
            func_id: id.into(),
            timestamp: 0,
            function_name: "f".into(),
            workflow_name: "w".into(),
            workflow_id: "1:1".into(),
        }
    }

    #[test]
    fn ring_capacity_applies_to_invocations() {
        let t = Tracer::with_capacity(4);
        for i in 0..6 {
            t.capture_invocation(inv(&format!("1:1:{i}")));
        }
        assert_eq!(t.dropped(), 2);
        let got = t.drain(usize::MAX);
        assert_eq!(got.len(), 4);
        assert!(matches!(&got[0], TraceRecord::Invocation(e) if e.func_id == "1:1:2"));
    }

    #[test]
    fn writes_bypass_the_ring() {
        let t = Tracer::with_capacity(1);
        let ev = |i: i64| TableEvent {
            func_id: "f".into(),
            timestamp: 1,
            event_type: EventType::Insert,
            query: "INSERT".into(),
            record_data: [("k".to_string(), Json::from(i))].into_iter().collect(),
        };
        t.publish_commit("f", 1, (0..5).map(|i| ("T".to_string(), ev(i))).collect());
        assert_eq!(t.dropped(), 0);
        assert_eq!(t.pending(), 6);
    }

    #[test]
    fn event_json_field_names() {
        let ev = TableEvent {
            func_id: "1:2:3".into(),
            timestamp: 9,
            event_type: EventType::Update,
            query: "UPDATE T SET v=? WHERE k=?".into(),
            record_data: Map::new(),
        };
        let j = serde_json::to_value(&ev).unwrap();
        let keys: Vec<&str> = j.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, vec!["event_type", "func_id", "query", "record_data", "timestamp"]);
        assert_eq!(j["event_type"], "update");
        let j = serde_json::to_value(inv("x")).unwrap();
        let mut keys: Vec<&str> = j.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(keys, vec!["func_id", "function_name", "timestamp", "workflow_id", "workflow_name"]);
    }
}
