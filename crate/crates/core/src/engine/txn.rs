use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::Ordering;
use std::sync::Arc;

use parking_lot::{MutexGuard, RwLockReadGuard, RwLockWriteGuard};
use serde_json::{Map, Value as Json};

use super::schema::TableMeta;
use super::statement::{BoundStatement, SortOrder};
use super::table::{key_of, Key, Row, TableData};
use super::{Engine, EngineError, Partition, PreparedStatement, ResultRow, ResultSet, Shared, StatementKind, TxnMode};
use crate::trace::{EventType, TableEvent};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxnStatus {
    Active,
    Committed,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommitReceipt {
    pub txn_id: u64,
    pub commit_timestamp: u64,
}

enum SharedGuard<'e> {
    Read(RwLockReadGuard<'e, Shared>),
    Write(RwLockWriteGuard<'e, Shared>),
}

#[derive(Debug, Clone)]
enum Change {
    Insert(Row),
    Update(Row),
    Delete(Row),
}

#[derive(Debug, Clone)]
struct Mutation {
    meta: Arc<TableMeta>,
    key: Key,
    change: Change,
    query: Arc<str>,
}

enum Scope {
    Replicated,
    Partitions(Vec<usize>),
}

/// An active transaction. Holds its partition latch (or the global latch)
/// until it commits, aborts or is dropped; dropping an active transaction
/// aborts it.
pub struct Transaction<'e> {
    engine: &'e Engine,
    id: u64,
    mode: TxnMode,
    shared: Option<SharedGuard<'e>>,
    parts: Vec<(usize, MutexGuard<'e, Partition>)>,
    overlay: HashMap<String, BTreeMap<Key, Option<Row>>>,
    log: Vec<Mutation>,
    status: TxnStatus,
    trace_tag: Option<Arc<str>>,
    statement_seq: HashMap<String, u32>,
}

impl<'e> Transaction<'e> {
    pub(super) fn begin(engine: &'e Engine, mode: TxnMode) -> Result<Self, EngineError> {
        let inner = &engine.inner;
        let (shared, parts) = match mode {
            TxnMode::SinglePartition(p) => {
                if p >= inner.partitions.len() {
                    return Err(EngineError::InvalidPartition(p));
                }
                let shared = SharedGuard::Read(inner.shared.read());
                (shared, vec![(p, inner.partitions[p].lock())])
            }
            TxnMode::MultiPartition => {
                let shared = SharedGuard::Write(inner.shared.write());
                let parts = inner.partitions.iter().enumerate().map(|(i, p)| (i, p.lock())).collect();
                (shared, parts)
            }
        };
        Ok(Transaction {
            engine,
            id: inner.next_txn.fetch_add(1, Ordering::SeqCst),
            mode,
            shared: Some(shared),
            parts,
            overlay: HashMap::new(),
            log: Vec::new(),
            status: TxnStatus::Active,
            trace_tag: None,
            statement_seq: HashMap::new(),
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn mode(&self) -> TxnMode {
        self.mode
    }

    pub fn status(&self) -> TxnStatus {
        self.status
    }

    pub fn engine(&self) -> &'e Engine {
        self.engine
    }

    /// Tags every trace event this transaction emits with `func_id`.
    pub fn set_trace_tag(&mut self, func_id: impl Into<Arc<str>>) {
        self.trace_tag = Some(func_id.into());
    }

    fn shared(&self) -> &Shared {
        match self.shared.as_ref().expect("guard held while active") {
            SharedGuard::Read(g) => g,
            SharedGuard::Write(g) => g,
        }
    }

    fn own_partition(&self) -> Option<usize> {
        match self.mode {
            TxnMode::SinglePartition(p) => Some(p),
            TxnMode::MultiPartition => None,
        }
    }

    fn fail(&mut self, err: EngineError) -> EngineError {
        self.status = TxnStatus::Aborted;
        self.overlay.clear();
        self.log.clear();
        err
    }

    fn committed(&self, meta: &TableMeta, partition: Option<usize>) -> &TableData {
        match partition {
            None => &self.shared().replicated[meta.name()],
            Some(p) => {
                let idx = match self.mode {
                    TxnMode::SinglePartition(_) => 0,
                    TxnMode::MultiPartition => p,
                };
                &self.parts[idx].1.tables[meta.name()]
            }
        }
    }

    fn partition_of_key(&self, meta: &TableMeta, key: &Key) -> Option<usize> {
        meta.part_in_key.map(|pos| self.engine.route(meta, &key[pos]))
    }

    fn scope(&self, meta: &TableMeta, bindings: &[(usize, Value)]) -> Result<Scope, EngineError> {
        let Some(part_col) = meta.part else {
            return Ok(Scope::Replicated);
        };
        let bound = bindings.iter().find(|(c, _)| *c == part_col).map(|(_, v)| v);
        match (bound, self.own_partition()) {
            (Some(v), own) => {
                let p = self.engine.route(meta, v);
                if let Some(own) = own {
                    if own != p {
                        return Err(EngineError::WrongPartition { table: meta.name().to_owned(), partition: Some(p) });
                    }
                }
                Ok(Scope::Partitions(vec![p]))
            }
            (None, Some(own)) => Ok(Scope::Partitions(vec![own])),
            (None, None) => Ok(Scope::Partitions((0..self.engine.partitions()).collect())),
        }
    }

    fn effective(&self, meta: &TableMeta, key: &Key) -> Option<Row> {
        if let Some(pending) = self.overlay.get(meta.name()).and_then(|t| t.get(key)) {
            return pending.clone();
        }
        let partition = self.partition_of_key(meta, key);
        self.committed(meta, partition).get(key).cloned()
    }

    /// Rows matching `bindings`, merging this transaction's pending writes
    /// over committed state, in primary key order.
    fn scan(&self, meta: &TableMeta, bindings: &[(usize, Value)]) -> Result<BTreeMap<Key, Row>, EngineError> {
        let scope = self.scope(meta, bindings)?;
        let mut out = BTreeMap::new();
        if bindings.iter().any(|(_, v)| v.is_null()) {
            return Ok(out);
        }
        let matches = |row: &Row| bindings.iter().all(|(c, v)| row[*c].matches(v));
        let pending = self.overlay.get(meta.name());
        let parts: Vec<Option<usize>> = match &scope {
            Scope::Replicated => vec![None],
            Scope::Partitions(ps) => ps.iter().map(|p| Some(*p)).collect(),
        };
        for &p in &parts {
            let data = self.committed(meta, p);
            for key in data.candidates(meta, bindings) {
                if pending.is_some_and(|t| t.contains_key(&key)) {
                    continue;
                }
                let row = data.get(&key).expect("candidate exists");
                if matches(row) {
                    out.insert(key, row.clone());
                }
            }
        }
        if let Some(pending) = pending {
            for (key, row) in pending {
                let Some(row) = row else { continue };
                if !parts.contains(&self.partition_of_key(meta, key)) {
                    continue;
                }
                if matches(row) {
                    out.insert(key.clone(), row.clone());
                }
            }
        }
        Ok(out)
    }

    fn check_writable(&self, meta: &TableMeta) -> Result<(), EngineError> {
        if meta.schema.is_replicated() && self.own_partition().is_some() {
            return Err(EngineError::WrongPartition { table: meta.name().to_owned(), partition: None });
        }
        Ok(())
    }

    fn check_types(meta: &TableMeta, row: &Row) -> Result<(), EngineError> {
        for (col, v) in meta.schema.columns.iter().zip(row) {
            if let Some(ty) = v.value_type() {
                if ty != col.ty {
                    return Err(EngineError::TypeMismatch { table: meta.name().to_owned(), column: col.name.clone() });
                }
            }
        }
        Ok(())
    }

    fn stage(&mut self, meta: &Arc<TableMeta>, query: &Arc<str>, key: Key, row: Option<Row>, change: Change) {
        self.overlay.entry(meta.name().to_owned()).or_default().insert(key.clone(), row);
        self.log.push(Mutation { meta: meta.clone(), key, change, query: query.clone() });
    }

    /// Executes a prepared statement with positional parameters.
    pub fn exec(&mut self, stmt: &PreparedStatement, params: &[Value]) -> Result<ResultSet, EngineError> {
        if self.status != TxnStatus::Active {
            return Err(EngineError::AlreadyTerminated);
        }
        let meta = self
            .shared()
            .catalog
            .get(&stmt.table)
            .cloned()
            .ok_or_else(|| EngineError::UnknownTable(stmt.table.clone()))?;
        let bound = stmt.bind(&meta)?;
        if params.len() != bound.arity {
            return Err(EngineError::ArityMismatch { statement: stmt.id.clone(), expected: bound.arity, got: params.len() });
        }
        let result = match stmt.kind {
            StatementKind::SelectByKey | StatementKind::SelectByPredicate => self.select(&meta, stmt, &bound, params),
            StatementKind::Insert => self.insert(&meta, &stmt.sql().into(), &bound, params),
            StatementKind::Update => self.update(&meta, &stmt.sql().into(), &bound, params),
            StatementKind::Delete => self.delete(&meta, &stmt.sql().into(), &bound, params),
        };
        result.map_err(|e| match e {
            EngineError::WrongPartition { .. } | EngineError::ConstraintViolation { .. } | EngineError::TypeMismatch { .. } => {
                self.fail(e)
            }
            other => other,
        })
    }

    fn bindings(bound: &BoundStatement, params: &[Value]) -> Vec<(usize, Value)> {
        bound.predicate.iter().copied().zip(params.iter().cloned()).collect()
    }

    fn select(
        &mut self,
        meta: &Arc<TableMeta>,
        stmt: &PreparedStatement,
        bound: &BoundStatement,
        params: &[Value],
    ) -> Result<ResultSet, EngineError> {
        let rows = self.scan(meta, &Self::bindings(bound, params))?;
        let mut rows: Vec<(Key, Row)> = rows.into_iter().collect();
        if let Some((col, order)) = bound.order_by {
            rows.sort_by(|a, b| {
                let o = a.1[col].cmp(&b.1[col]);
                match order {
                    SortOrder::Asc => o,
                    SortOrder::Desc => o.reverse(),
                }
            });
        }
        if let Some(n) = stmt.limit {
            rows.truncate(n);
        }
        let columns = bound.columns.iter().map(|&c| meta.schema.columns[c].name.clone()).collect();
        let rows: Vec<ResultRow> = rows
            .into_iter()
            .map(|(key, row)| ResultRow { values: bound.columns.iter().map(|&c| row[c].clone()).collect(), key })
            .collect();
        self.capture_reads(meta, stmt, &rows);
        Ok(ResultSet { columns, rows, affected: 0 })
    }

    fn capture_reads(&mut self, meta: &TableMeta, stmt: &PreparedStatement, rows: &[ResultRow]) {
        if meta.schema.is_system() {
            return;
        }
        let Some(tag) = self.trace_tag.clone() else { return };
        let Some(tracer) = self.engine.tracer() else { return };
        let seq = self.statement_seq.entry(stmt.id.clone()).or_insert(0);
        let current = *seq;
        *seq += 1;
        let timestamp = self.engine.tick();
        let query = stmt.sql();
        let events = rows
            .iter()
            .map(|r| {
                let record_data = key_object(meta, &r.key);
                TableEvent { func_id: tag.to_string(), timestamp, event_type: EventType::Read, query: query.clone(), record_data }
            })
            .collect();
        tracer.capture_reads(meta.name(), &stmt.id, current, events);
    }

    fn insert(&mut self, meta: &Arc<TableMeta>, query: &Arc<str>, bound: &BoundStatement, params: &[Value]) -> Result<ResultSet, EngineError> {
        self.check_writable(meta)?;
        let mut row = vec![Value::Null; meta.schema.columns.len()];
        for (&c, v) in bound.columns.iter().zip(params) {
            row[c] = v.clone();
        }
        Self::check_types(meta, &row)?;
        let key = key_of(meta, &row);
        if key.iter().any(Value::is_null) {
            return Err(EngineError::ConstraintViolation { table: meta.name().to_owned(), key: "NULL in primary key".into() });
        }
        if let (Some(own), Some(p)) = (self.own_partition(), self.partition_of_key(meta, &key)) {
            if own != p {
                return Err(EngineError::WrongPartition { table: meta.name().to_owned(), partition: Some(p) });
            }
        }
        if self.effective(meta, &key).is_some() {
            return Err(EngineError::ConstraintViolation { table: meta.name().to_owned(), key: format_key(&key) });
        }
        self.stage(meta, query, key, Some(row.clone()), Change::Insert(row));
        Ok(ResultSet { affected: 1, ..Default::default() })
    }

    fn update(&mut self, meta: &Arc<TableMeta>, query: &Arc<str>, bound: &BoundStatement, params: &[Value]) -> Result<ResultSet, EngineError> {
        self.check_writable(meta)?;
        let (set_params, pred_params) = params.split_at(bound.set.len());
        let rows = self.scan(meta, &Self::bindings(bound, pred_params))?;
        let affected = rows.len();
        for (key, mut new) in rows {
            for (&c, v) in bound.set.iter().zip(set_params) {
                new[c] = v.clone();
            }
            Self::check_types(meta, &new)?;
            self.stage(meta, query, key, Some(new.clone()), Change::Update(new));
        }
        Ok(ResultSet { affected, ..Default::default() })
    }

    fn delete(&mut self, meta: &Arc<TableMeta>, query: &Arc<str>, bound: &BoundStatement, params: &[Value]) -> Result<ResultSet, EngineError> {
        self.check_writable(meta)?;
        let rows = self.scan(meta, &Self::bindings(bound, params))?;
        let affected = rows.len();
        for (key, old) in rows {
            self.stage(meta, query, key, None, Change::Delete(old));
        }
        Ok(ResultSet { affected, ..Default::default() })
    }

    /// Makes every buffered mutation visible and hands the change events to
    /// the tracer before the latch is released.
    pub fn commit(mut self) -> Result<CommitReceipt, EngineError> {
        if self.status != TxnStatus::Active {
            return Err(EngineError::AlreadyTerminated);
        }
        let engine = self.engine;
        let ts = engine.inner.tick();
        let log = std::mem::take(&mut self.log);
        let mut user_mutations = 0u64;
        for m in &log {
            let partition = self.partition_of_key(&m.meta, &m.key);
            let data = match partition {
                None => match self.shared.as_mut().expect("guard held") {
                    SharedGuard::Write(g) => Arc::make_mut(g.replicated.get_mut(m.meta.name()).expect("table exists")),
                    SharedGuard::Read(_) => unreachable!("replicated writes need the global latch"),
                },
                Some(p) => {
                    let idx = if matches!(self.mode, TxnMode::SinglePartition(_)) { 0 } else { p };
                    Arc::make_mut(self.parts[idx].1.tables.get_mut(m.meta.name()).expect("table exists"))
                }
            };
            match &m.change {
                Change::Insert(row) | Change::Update(row) => data.put(&m.meta, m.key.clone(), row.clone()),
                Change::Delete(_) => data.remove(&m.meta, &m.key),
            }
            if !m.meta.schema.is_system() {
                user_mutations += 1;
            }
        }
        if let (Some(tag), Some(tracer)) = (&self.trace_tag, engine.tracer()) {
            let events: Vec<(String, TableEvent)> = log
                .iter()
                .filter(|m| !m.meta.schema.is_system())
                .map(|m| {
                    let (event_type, image) = match &m.change {
                        Change::Insert(r) => (EventType::Insert, r),
                        Change::Update(new) => (EventType::Update, new),
                        Change::Delete(old) => (EventType::Delete, old),
                    };
                    let ev = TableEvent {
                        func_id: tag.to_string(),
                        timestamp: ts,
                        event_type,
                        query: m.query.to_string(),
                        record_data: row_object(&m.meta, image),
                    };
                    (m.meta.name().to_owned(), ev)
                })
                .collect();
            tracer.publish_commit(tag, ts, events);
        }
        engine.inner.stats.committed.fetch_add(1, Ordering::Relaxed);
        engine.inner.stats.user_mutations.fetch_add(user_mutations, Ordering::Relaxed);
        self.status = TxnStatus::Committed;
        self.overlay.clear();
        Ok(CommitReceipt { txn_id: self.id, commit_timestamp: ts })
    }

    /// Discards every buffered mutation.
    pub fn abort(mut self) {
        self.status = TxnStatus::Aborted;
        self.overlay.clear();
        self.log.clear();
    }
}

impl Drop for Transaction<'_> {
    fn drop(&mut self) {
        if self.status != TxnStatus::Committed {
            self.engine.inner.stats.aborted.fetch_add(1, Ordering::Relaxed);
        }
        for (_, guard) in self.parts.drain(..).rev() {
            MutexGuard::unlock_fair(guard);
        }
        match self.shared.take() {
            Some(SharedGuard::Read(g)) => RwLockReadGuard::unlock_fair(g),
            Some(SharedGuard::Write(g)) => RwLockWriteGuard::unlock_fair(g),
            None => {}
        }
    }
}

fn format_key(key: &Key) -> String {
    let parts: Vec<String> = key.iter().map(ToString::to_string).collect();
    format!("({})", parts.join(", "))
}

pub(crate) fn key_object(meta: &TableMeta, key: &Key) -> Map<String, Json> {
    meta.pk
        .iter()
        .zip(key)
        .map(|(&c, v)| (meta.schema.columns[c].name.clone(), v.to_json()))
        .collect()
}

pub(crate) fn row_object(meta: &TableMeta, row: &Row) -> Map<String, Json> {
    meta.schema.columns.iter().zip(row).map(|(c, v)| (c.name.clone(), v.to_json())).collect()
}
