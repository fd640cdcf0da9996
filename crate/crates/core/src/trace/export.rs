//! Background export of captured events into an append-only sink.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::Mutex;

use super::query::EventStore;
use super::{CommitMarker, FunctionInvocationEvent, TableEvent, TraceRecord, Tracer};

pub const INVOCATIONS_FILE: &str = "FunctionInvocations.jsonl";
pub const COMMITS_FILE: &str = "Commits.jsonl";
pub const TABLES_FILE: &str = "Tables.json";

pub fn table_events_file(table: &str) -> String {
    format!("TableEvents_{table}.jsonl")
}

/// One deduplicated batch, in capture order within each stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExportBatch {
    pub invocations: Vec<FunctionInvocationEvent>,
    pub table_events: Vec<(String, TableEvent)>,
    pub commits: Vec<CommitMarker>,
}

impl ExportBatch {
    pub fn is_empty(&self) -> bool {
        self.invocations.is_empty() && self.table_events.is_empty() && self.commits.is_empty()
    }

    pub fn len(&self) -> usize {
        self.invocations.len() + self.table_events.len() + self.commits.len()
    }
}

/// Destination of exported batches. `append` must be all-or-nothing from
/// the exporter's point of view: on error the same batch is offered again.
pub trait Sink: Send {
    fn append(&mut self, batch: &ExportBatch) -> io::Result<()>;
    fn write_catalog(&mut self, tables: &BTreeMap<String, Vec<String>>) -> io::Result<()>;
}

/// Newline-delimited JSON files in one directory.
#[derive(Debug)]
pub struct JsonlSink {
    dir: PathBuf,
}

impl JsonlSink {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(JsonlSink { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn open(&self, name: &str) -> io::Result<BufWriter<File>> {
        Ok(BufWriter::new(OpenOptions::new().create(true).append(true).open(self.dir.join(name))?))
    }
}

fn write_lines<T: serde::Serialize>(w: &mut impl Write, items: impl IntoIterator<Item = T>) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *w, &item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

impl Sink for JsonlSink {
    fn append(&mut self, batch: &ExportBatch) -> io::Result<()> {
        if !batch.invocations.is_empty() {
            let mut w = self.open(INVOCATIONS_FILE)?;
            write_lines(&mut w, &batch.invocations)?;
            w.flush()?;
        }
        let mut by_table: BTreeMap<&str, Vec<&TableEvent>> = BTreeMap::new();
        for (table, ev) in &batch.table_events {
            by_table.entry(table).or_default().push(ev);
        }
        for (table, events) in by_table {
            let mut w = self.open(&table_events_file(table))?;
            write_lines(&mut w, events)?;
            w.flush()?;
        }
        if !batch.commits.is_empty() {
            let mut w = self.open(COMMITS_FILE)?;
            write_lines(&mut w, &batch.commits)?;
            w.flush()?;
        }
        Ok(())
    }

    fn write_catalog(&mut self, tables: &BTreeMap<String, Vec<String>>) -> io::Result<()> {
        let tmp = self.dir.join(format!("{TABLES_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(tables)?)?;
        fs::rename(tmp, self.dir.join(TABLES_FILE))
    }
}

/// Sink that keeps everything in an [`EventStore`] shared with the caller.
#[derive(Debug, Clone, Default)]
pub struct MemorySink {
    store: Arc<Mutex<EventStore>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn store(&self) -> EventStore {
        self.store.lock().clone()
    }
}

impl Sink for MemorySink {
    fn append(&mut self, batch: &ExportBatch) -> io::Result<()> {
        self.store.lock().extend(batch);
        Ok(())
    }

    fn write_catalog(&mut self, tables: &BTreeMap<String, Vec<String>>) -> io::Result<()> {
        self.store.lock().tables = tables.clone();
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExporterConfig {
    pub period: Duration,
    pub batch: usize,
    pub max_backoff: Duration,
}

impl Default for ExporterConfig {
    fn default() -> Self {
        ExporterConfig { period: Duration::from_millis(100), batch: 8_192, max_backoff: Duration::from_secs(2) }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExportStats {
    pub appends: u64,
    pub exported: u64,
    pub duplicates: u64,
    pub sink_errors: u64,
}

struct ExportState {
    sink: Box<dyn Sink>,
    seen: HashSet<String>,
    pending: Option<ExportBatch>,
    catalog_version: u64,
    stats: ExportStats,
}

impl ExportState {
    fn dedup(&mut self, records: Vec<TraceRecord>) -> ExportBatch {
        let mut batch = ExportBatch::default();
        for r in records {
            match r {
                TraceRecord::Invocation(inv) => {
                    if self.seen.insert(format!("i\u{1f}{}", inv.func_id)) {
                        batch.invocations.push(inv);
                    } else {
                        self.stats.duplicates += 1;
                    }
                }
                TraceRecord::Table { table, dedup, event } => {
                    if self.seen.insert(dedup) {
                        batch.table_events.push((table, event));
                    } else {
                        self.stats.duplicates += 1;
                    }
                }
                TraceRecord::Commit(c) => batch.commits.push(c),
            }
        }
        batch
    }

    /// Pushes the pending batch (if any) to the sink. Returns false when the
    /// sink failed and the batch is still pending.
    fn try_flush_pending(&mut self, tracer: &Tracer) -> bool {
        let (catalog, version) = tracer.catalog();
        if version != self.catalog_version {
            if self.sink.write_catalog(&catalog).is_err() {
                self.stats.sink_errors += 1;
                return false;
            }
            self.catalog_version = version;
        }
        let Some(batch) = self.pending.take() else { return true };
        match self.sink.append(&batch) {
            Ok(()) => {
                self.stats.appends += 1;
                self.stats.exported += batch.len() as u64;
                true
            }
            Err(_) => {
                self.stats.sink_errors += 1;
                self.pending = Some(batch);
                false
            }
        }
    }

    /// Exports one batch. Returns (records drained, sink healthy).
    fn step(&mut self, tracer: &Tracer, max: usize) -> (usize, bool) {
        if !self.try_flush_pending(tracer) {
            return (0, false);
        }
        let records = tracer.drain(max);
        let n = records.len();
        if n == 0 {
            return (0, true);
        }
        let batch = self.dedup(records);
        if !batch.is_empty() {
            self.pending = Some(batch);
        }
        (n, self.try_flush_pending(tracer))
    }
}

/// Drains a [`Tracer`] into a [`Sink`] on a background thread.
pub struct Exporter {
    tracer: Arc<Tracer>,
    state: Arc<Mutex<ExportState>>,
    paused: Arc<AtomicBool>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
    batch: usize,
}

impl std::fmt::Debug for Exporter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Exporter").field("stats", &self.stats()).finish()
    }
}

impl Exporter {
    pub fn spawn(tracer: Arc<Tracer>, sink: Box<dyn Sink>, config: ExporterConfig) -> Self {
        let state = Arc::new(Mutex::new(ExportState {
            sink,
            seen: HashSet::new(),
            pending: None,
            catalog_version: 0,
            stats: ExportStats::default(),
        }));
        let paused = Arc::new(AtomicBool::new(false));
        let stop = Arc::new(AtomicBool::new(false));
        let batch = config.batch.max(1);
        let thread = {
            let (tracer, state, paused, stop) = (tracer.clone(), state.clone(), paused.clone(), stop.clone());
            std::thread::Builder::new()
                .name("trace-exporter".into())
                .spawn(move || {
                    let mut backoff = config.period;
                    while !stop.load(Ordering::SeqCst) {
                        tracer.wait(backoff);
                        if paused.load(Ordering::SeqCst) {
                            continue;
                        }
                        let mut st = state.lock();
                        loop {
                            let (n, healthy) = st.step(&tracer, batch);
                            if !healthy {
                                backoff = (backoff * 2).min(config.max_backoff);
                                break;
                            }
                            backoff = config.period;
                            if n < batch {
                                break;
                            }
                        }
                    }
                })
                .expect("spawn exporter thread")
        };
        Exporter { tracer, state, paused, stop, thread: Some(thread), batch }
    }

    pub fn pause(&self) {
        self.paused.store(true, Ordering::SeqCst);
    }

    pub fn resume(&self) {
        self.paused.store(false, Ordering::SeqCst);
        self.tracer.wake_exporter();
    }

    /// Exports everything captured so far, on the calling thread. Fails if
    /// the sink keeps rejecting a batch.
    pub fn flush(&self) -> io::Result<()> {
        let mut st = self.state.lock();
        let mut failures = 0;
        loop {
            let (n, healthy) = st.step(&self.tracer, self.batch);
            if !healthy {
                failures += 1;
                if failures >= 5 {
                    return Err(io::Error::other("trace sink keeps failing"));
                }
                std::thread::sleep(Duration::from_millis(10 << failures));
                continue;
            }
            if n == 0 && st.pending.is_none() {
                return Ok(());
            }
        }
    }

    pub fn stats(&self) -> ExportStats {
        self.state.lock().stats
    }

    /// Flushes and joins the background thread.
    pub fn stop(mut self) -> io::Result<ExportStats> {
        self.shutdown();
        self.flush()?;
        Ok(self.stats())
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.tracer.wake_exporter();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Exporter {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{EventType, TracerConfig};
    use serde_json::{Map, Value as Json};

    fn read_event(func: &str, k: i64) -> TableEvent {
        let mut record_data = Map::new();
        record_data.insert("k".into(), Json::from(k));
        TableEvent { func_id: func.into(), timestamp: k as u64, event_type: EventType::Read, query: "q".into(), record_data }
    }

    #[derive(Default)]
    struct FlakySink {
        inner: MemorySink,
        fail_next: usize,
        appends: Arc<Mutex<usize>>,
    }

    impl Sink for FlakySink {
        fn append(&mut self, batch: &ExportBatch) -> io::Result<()> {
            if self.fail_next > 0 {
                self.fail_next -= 1;
                return Err(io::Error::other("injected"));
            }
            *self.appends.lock() += 1;
            self.inner.append(batch)
        }
        fn write_catalog(&mut self, t: &BTreeMap<String, Vec<String>>) -> io::Result<()> {
            self.inner.write_catalog(t)
        }
    }

    #[test]
    fn batches_and_dedups() {
        let tracer = Arc::new(Tracer::new(TracerConfig { capacity: 100_000, spill_path: None, batch_hint: 1_000 }).unwrap());
        let sink = MemorySink::new();
        let appends = Arc::new(Mutex::new(0));
        let flaky = FlakySink { inner: sink.clone(), fail_next: 2, appends: appends.clone() };
        let exporter = Exporter::spawn(
            tracer.clone(),
            Box::new(flaky),
            ExporterConfig { period: Duration::from_secs(60), batch: 1_000, ..Default::default() },
        );
        exporter.pause();
        for i in 0..10_000 {
            tracer.capture_reads("T", "s", 0, vec![read_event("1:1:1", i)]);
        }
        // a re-execution of the first 100 reads
        for i in 0..100 {
            tracer.capture_reads("T", "s", 0, vec![read_event("1:1:1", i)]);
        }
        let stats = exporter.stop().unwrap();
        assert!(*appends.lock() >= 10);
        assert_eq!(stats.duplicates, 100);
        assert_eq!(stats.sink_errors, 2);
        assert_eq!(sink.store().table_events["T"].len(), 10_000);
    }

    #[test]
    fn jsonl_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = JsonlSink::new(dir.path()).unwrap();
        let batch = ExportBatch {
            invocations: vec![FunctionInvocationEvent {
                func_id: "1:1:1".into(),
                timestamp: 1,
                function_name: "f".into(),
                workflow_name: "w".into(),
                workflow_id: "1:1".into(),
            }],
            table_events: vec![("Cart".into(), read_event("1:1:1", 3))],
            commits: vec![CommitMarker { func_id: "1:1:1".into(), timestamp: 2 }],
        };
        sink.append(&batch).unwrap();
        sink.append(&batch).unwrap();
        let text = fs::read_to_string(dir.path().join("TableEvents_Cart.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 2);
        let store = EventStore::load(dir.path()).unwrap();
        assert_eq!(store.invocations.len(), 2);
        assert_eq!(store.commits.len(), 2);
    }
}
