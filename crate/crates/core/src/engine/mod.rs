//! Embedded, partitioned, in-memory relational engine.
//!
//! Every partition owns a serial executor: a single-partition transaction
//! holds its partition's latch for its whole lifetime, so transactions on one
//! partition never interleave. Multi-partition transactions take the global
//! latch exclusively, which first drains every partition. Replicated tables
//! live behind the global latch and can only be written by multi-partition
//! transactions.

mod schema;
mod statement;
mod table;
mod txn;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

pub use schema::{ColumnDef, Routing, TableMeta, TableSchema, SYSTEM_PREFIX};
pub use statement::{OrderBy, PreparedStatement, ResultRow, ResultSet, SortOrder, StatementKind};
pub use table::{Key, Row};
pub use txn::{CommitReceipt, Transaction, TxnStatus};

use crate::codec::Encoder;
use crate::trace::Tracer;
use crate::value::Value;
use table::TableData;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("table {0} already exists")]
    DuplicateTable(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {table}.{column}")]
    UnknownColumn { table: String, column: String },
    #[error("invalid statement {id}: {reason}")]
    InvalidStatement { id: String, reason: String },
    #[error("statement {statement} takes {expected} parameters, got {got}")]
    ArityMismatch { statement: String, expected: usize, got: usize },
    /// A single-partition transaction touched a row owned by another
    /// partition (`partition`), or wrote a replicated table (`None`).
    #[error("{table}: access outside the transaction's partition (target {partition:?})")]
    WrongPartition { table: String, partition: Option<usize> },
    #[error("{table}: duplicate primary key {key}")]
    ConstraintViolation { table: String, key: String },
    #[error("{table}.{column}: value has the wrong type")]
    TypeMismatch { table: String, column: String },
    #[error("partition {0} does not exist")]
    InvalidPartition(usize),
    #[error("transaction already terminated")]
    AlreadyTerminated,
    #[error("engine stopped")]
    EngineStopped,
    #[error("transient failure: {0}")]
    Transient(String),
}

impl EngineError {
    /// Retryable errors leave no effects and may succeed on a fresh attempt.
    pub fn is_retryable(&self) -> bool {
        matches!(self, EngineError::Transient(_))
    }

    pub fn class(&self) -> &'static str {
        match self {
            EngineError::DuplicateTable(_) => "DuplicateTable",
            EngineError::InvalidSchema(_) => "InvalidSchema",
            EngineError::UnknownTable(_) => "UnknownTable",
            EngineError::UnknownColumn { .. } => "UnknownColumn",
            EngineError::InvalidStatement { .. } => "InvalidStatement",
            EngineError::ArityMismatch { .. } => "ArityMismatch",
            EngineError::WrongPartition { .. } => "WrongPartition",
            EngineError::ConstraintViolation { .. } => "ConstraintViolation",
            EngineError::TypeMismatch { .. } => "TypeMismatch",
            EngineError::InvalidPartition(_) => "InvalidPartition",
            EngineError::AlreadyTerminated => "AlreadyTerminated",
            EngineError::EngineStopped => "EngineStopped",
            EngineError::Transient(_) => "Transient",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxnMode {
    SinglePartition(usize),
    MultiPartition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub partitions: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { partitions: 8 }
    }
}

#[derive(Debug, Default)]
pub struct EngineStats {
    pub committed: AtomicU64,
    pub aborted: AtomicU64,
    /// Row mutations committed to non-system tables.
    pub user_mutations: AtomicU64,
}

#[derive(Default)]
pub(crate) struct Shared {
    catalog: HashMap<String, Arc<TableMeta>>,
    replicated: HashMap<String, Arc<TableData>>,
}

#[derive(Default)]
pub(crate) struct Partition {
    tables: HashMap<String, Arc<TableData>>,
}

pub(crate) struct EngineInner {
    config: EngineConfig,
    shared: RwLock<Shared>,
    partitions: Vec<Mutex<Partition>>,
    clock: AtomicU64,
    next_txn: AtomicU64,
    stopped: AtomicBool,
    tracer: RwLock<Option<Arc<Tracer>>>,
    stats: EngineStats,
}

impl EngineInner {
    fn tick(&self) -> u64 {
        self.clock.fetch_add(1, Ordering::SeqCst) + 1
    }
}

/// Handle to an engine; clones share the same data.
#[derive(Clone)]
pub struct Engine {
    inner: Arc<EngineInner>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("partitions", &self.inner.config.partitions).finish()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ *b as u64).wrapping_mul(FNV_PRIME))
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        assert!(config.partitions > 0, "engine needs at least one partition");
        let partitions = (0..config.partitions).map(|_| Mutex::new(Partition::default())).collect();
        Engine {
            inner: Arc::new(EngineInner {
                config,
                shared: RwLock::new(Shared::default()),
                partitions,
                clock: AtomicU64::new(0),
                next_txn: AtomicU64::new(1),
                stopped: AtomicBool::new(false),
                tracer: RwLock::new(None),
                stats: EngineStats::default(),
            }),
        }
    }

    pub fn config(&self) -> EngineConfig {
        self.inner.config
    }

    pub fn partitions(&self) -> usize {
        self.inner.config.partitions
    }

    pub fn stats(&self) -> &EngineStats {
        &self.inner.stats
    }

    /// Current value of the logical clock.
    pub fn now(&self) -> u64 {
        self.inner.clock.load(Ordering::SeqCst)
    }

    /// Advances the logical clock and returns the new time.
    pub fn tick(&self) -> u64 {
        self.inner.tick()
    }

    pub fn set_tracer(&self, tracer: Option<Arc<Tracer>>) {
        if let Some(t) = &tracer {
            for meta in self.inner.shared.read().catalog.values() {
                t.register_table(&meta.schema);
            }
        }
        *self.inner.tracer.write() = tracer;
    }

    pub fn tracer(&self) -> Option<Arc<Tracer>> {
        self.inner.tracer.read().clone()
    }

    /// Partition owning rows whose partition column holds `value`.
    pub fn partition_for(&self, value: &Value) -> usize {
        let mut e = Encoder::new();
        e.value(value);
        (fnv1a(&e.finish()) % self.inner.config.partitions as u64) as usize
    }

    pub(crate) fn route(&self, meta: &TableMeta, value: &Value) -> usize {
        match meta.schema.routing {
            Routing::Hash => self.partition_for(value),
            Routing::Direct => {
                let n = self.inner.config.partitions as i64;
                value.as_i64().map(|v| v.rem_euclid(n) as usize).unwrap_or(0)
            }
        }
    }

    pub fn stop(&self) {
        self.inner.stopped.store(true, Ordering::SeqCst);
    }

    pub fn is_stopped(&self) -> bool {
        self.inner.stopped.load(Ordering::SeqCst)
    }

    pub fn create_table(&self, schema: TableSchema) -> Result<(), EngineError> {
        let meta = Arc::new(TableMeta::new(schema)?);
        let mut shared = self.inner.shared.write();
        if shared.catalog.contains_key(meta.name()) {
            return Err(EngineError::DuplicateTable(meta.name().to_owned()));
        }
        if meta.schema.is_replicated() {
            shared.replicated.insert(meta.name().to_owned(), Arc::new(TableData::new(&meta)));
        } else {
            for p in &self.inner.partitions {
                p.lock().tables.insert(meta.name().to_owned(), Arc::new(TableData::new(&meta)));
            }
        }
        if let Some(t) = self.inner.tracer.read().as_ref() {
            t.register_table(&meta.schema);
        }
        shared.catalog.insert(meta.name().to_owned(), meta);
        Ok(())
    }

    pub fn has_table(&self, name: &str) -> bool {
        self.inner.shared.read().catalog.contains_key(name)
    }

    pub fn table_meta(&self, name: &str) -> Option<Arc<TableMeta>> {
        self.inner.shared.read().catalog.get(name).cloned()
    }

    /// Checks a statement against the catalog without executing it.
    pub fn validate(&self, stmt: &PreparedStatement) -> Result<(), EngineError> {
        let meta = self.table_meta(&stmt.table).ok_or_else(|| EngineError::UnknownTable(stmt.table.clone()))?;
        stmt.bind(&meta).map(|_| ())
    }

    /// Starts a transaction. Blocks until the partition (or, for
    /// multi-partition mode, the whole engine) is free.
    pub fn begin(&self, mode: TxnMode) -> Result<Transaction<'_>, EngineError> {
        if self.is_stopped() {
            return Err(EngineError::EngineStopped);
        }
        Transaction::begin(self, mode)
    }

    /// Runs `f` in a transaction, committing on `Ok` and aborting on `Err`.
    pub fn run<T>(
        &self,
        mode: TxnMode,
        f: impl FnOnce(&mut Transaction<'_>) -> Result<T, EngineError>,
    ) -> Result<T, EngineError> {
        let mut txn = self.begin(mode)?;
        match f(&mut txn) {
            Ok(v) => {
                txn.commit()?;
                Ok(v)
            }
            Err(e) => {
                txn.abort();
                Err(e)
            }
        }
    }

    /// Consistent copy of every table, taken under the global latch.
    pub fn snapshot(&self) -> Snapshot {
        let shared = self.inner.shared.write();
        let parts: Vec<_> = self.inner.partitions.iter().map(|p| p.lock()).collect();
        let mut tables = BTreeMap::new();
        for (name, meta) in &shared.catalog {
            let mut rows = BTreeMap::new();
            if meta.schema.is_replicated() {
                rows.extend(shared.replicated[name].rows.iter().map(|(k, v)| (k.clone(), v.clone())));
            } else {
                for p in &parts {
                    rows.extend(p.tables[name].rows.iter().map(|(k, v)| (k.clone(), v.clone())));
                }
            }
            tables.insert(name.clone(), SnapshotTable { schema: meta.schema.clone(), rows });
        }
        Snapshot { tables, clock: self.now() }
    }

    /// Builds a fresh engine holding exactly the snapshot's contents.
    pub fn from_snapshot(config: EngineConfig, snapshot: &Snapshot) -> Result<Engine, EngineError> {
        let engine = Engine::new(config);
        for t in snapshot.tables.values() {
            engine.create_table(t.schema.clone())?;
        }
        {
            let mut shared = engine.inner.shared.write();
            let mut parts: Vec<_> = engine.inner.partitions.iter().map(|p| p.lock()).collect();
            for (name, t) in &snapshot.tables {
                let meta = shared.catalog[name].clone();
                for (k, row) in &t.rows {
                    let data = match meta.part_in_key {
                        None => shared.replicated.get_mut(name).expect("table created"),
                        Some(pos) => {
                            let p = engine.route(&meta, &k[pos]);
                            parts[p].tables.get_mut(name).expect("table created")
                        }
                    };
                    let data = Arc::make_mut(data);
                    data.put(&meta, k.clone(), row.clone());
                }
            }
        }
        engine.inner.clock.store(snapshot.clock, Ordering::SeqCst);
        Ok(engine)
    }
}

impl Engine {
    /// Consistent copy that shares unchanged tables with this engine. Each
    /// side copies a table on its first write to it. The copy has no tracer.
    pub fn fork(&self) -> Engine {
        let shared = self.inner.shared.write();
        let parts: Vec<_> = self.inner.partitions.iter().map(|p| p.lock()).collect();
        Engine {
            inner: Arc::new(EngineInner {
                config: self.inner.config,
                shared: RwLock::new(Shared { catalog: shared.catalog.clone(), replicated: shared.replicated.clone() }),
                partitions: parts.iter().map(|p| Mutex::new(Partition { tables: p.tables.clone() })).collect(),
                clock: AtomicU64::new(self.now()),
                next_txn: AtomicU64::new(1),
                stopped: AtomicBool::new(false),
                tracer: RwLock::new(None),
                stats: EngineStats::default(),
            }),
        }
    }

    /// Whether both engines hold the same rows in every non-system table.
    pub fn same_user_state(&self, other: &Engine) -> bool {
        if self.partitions() != other.partitions() {
            return self.snapshot().user_state_bytes() == other.snapshot().user_state_bytes();
        }
        let same = |a: &Arc<TableData>, b: &Arc<TableData>| Arc::ptr_eq(a, b) || a.rows == b.rows;
        let (sa, sb) = (self.inner.shared.read(), other.inner.shared.read());
        let user = |s: &Shared| -> Vec<String> {
            let mut v: Vec<String> = s.catalog.values().filter(|m| !m.schema.is_system()).map(|m| m.name().to_owned()).collect();
            v.sort();
            v
        };
        let names = user(&sa);
        if names != user(&sb) {
            return false;
        }
        let pa: Vec<_> = self.inner.partitions.iter().map(|p| p.lock()).collect();
        let pb: Vec<_> = other.inner.partitions.iter().map(|p| p.lock()).collect();
        names.iter().all(|n| match (sa.replicated.get(n), sb.replicated.get(n)) {
            (Some(a), Some(b)) => same(a, b),
            (None, None) => pa.iter().zip(&pb).all(|(a, b)| same(&a.tables[n], &b.tables[n])),
            _ => false,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotTable {
    pub schema: TableSchema,
    pub rows: BTreeMap<Key, Row>,
}

/// Full copy of an engine's tables and clock.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub tables: BTreeMap<String, SnapshotTable>,
    pub clock: u64,
}

impl Snapshot {
    pub fn rows(&self, table: &str) -> Option<&BTreeMap<Key, Row>> {
        self.tables.get(table).map(|t| &t.rows)
    }

    /// Canonical encoding of every non-system table: equal application state
    /// encodes to equal bytes.
    pub fn user_state_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        for (name, t) in &self.tables {
            if t.schema.is_system() {
                continue;
            }
            e.str(name).u32(t.rows.len() as u32);
            for row in t.rows.values() {
                e.values(row);
            }
        }
        e.finish()
    }
}
