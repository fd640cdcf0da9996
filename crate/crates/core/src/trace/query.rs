//! Provenance queries over exported trace data.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use serde_json::{Map, Value as Json};
use thiserror::Error;

use super::export::{ExportBatch, COMMITS_FILE, INVOCATIONS_FILE, TABLES_FILE};
use super::{CommitMarker, EventType, FunctionInvocationEvent, TableEvent};

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("no exported history for table {0}")]
    UnknownTable(String),
    #[error("key has {got} values but {table} has {expected} primary key columns")]
    KeyArity { table: String, expected: usize, got: usize },
    #[error("no history for the record at or before the given timestamp")]
    NoHistory,
    #[error("reading trace data: {0}")]
    Io(#[from] io::Error),
}

/// State of one record as reconstructed from write events.
#[derive(Debug, Clone, PartialEq)]
pub enum RecordState {
    Present { timestamp: u64, row: Map<String, Json> },
    Deleted { timestamp: u64 },
}

/// A record written by some function: its table and primary key values.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordId {
    pub table: String,
    /// Primary key values as a JSON array, in key column order.
    pub key: String,
}

/// Exported trace data, loaded into memory for querying.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventStore {
    pub invocations: Vec<FunctionInvocationEvent>,
    pub table_events: BTreeMap<String, Vec<TableEvent>>,
    pub commits: Vec<CommitMarker>,
    /// Table name to primary key column names.
    pub tables: BTreeMap<String, Vec<String>>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in BufReader::new(fs::File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(io::Error::other)?);
    }
    Ok(out)
}

impl EventStore {
    /// Reads a directory written by [`super::export::JsonlSink`].
    pub fn load(dir: &Path) -> io::Result<Self> {
        let mut store = EventStore {
            invocations: read_jsonl(&dir.join(INVOCATIONS_FILE))?,
            commits: read_jsonl(&dir.join(COMMITS_FILE))?,
            ..Default::default()
        };
        let tables_path = dir.join(TABLES_FILE);
        if tables_path.exists() {
            store.tables = serde_json::from_slice(&fs::read(tables_path)?).map_err(io::Error::other)?;
        }
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            if let Some(table) = name.strip_prefix("TableEvents_").and_then(|n| n.strip_suffix(".jsonl")) {
                store.table_events.insert(table.to_owned(), read_jsonl(&path)?);
            }
        }
        Ok(store)
    }

    pub(crate) fn extend(&mut self, batch: &ExportBatch) {
        self.invocations.extend(batch.invocations.iter().cloned());
        for (table, ev) in &batch.table_events {
            self.table_events.entry(table.clone()).or_default().push(ev.clone());
        }
        self.commits.extend(batch.commits.iter().cloned());
    }

    pub fn events(&self, table: &str) -> &[TableEvent] {
        self.table_events.get(table).map_or(&[], Vec::as_slice)
    }

    fn key_columns(&self, table: &str, key: &[Json]) -> Result<&[String], QueryError> {
        let cols = self.tables.get(table).ok_or_else(|| QueryError::UnknownTable(table.to_owned()))?;
        if cols.len() != key.len() {
            return Err(QueryError::KeyArity { table: table.to_owned(), expected: cols.len(), got: key.len() });
        }
        Ok(cols)
    }

    fn key_of(cols: &[String], record: &Map<String, Json>) -> Option<Vec<Json>> {
        cols.iter().map(|c| record.get(c).cloned()).collect()
    }

    /// The last image of record `key` written at or before `ts`.
    pub fn query_record_state(&self, table: &str, key: &[Json], ts: u64) -> Result<RecordState, QueryError> {
        let cols = self.key_columns(table, key)?;
        let mut best: Option<&TableEvent> = None;
        for ev in self.events(table) {
            if !ev.event_type.is_write() || ev.timestamp > ts {
                continue;
            }
            if Self::key_of(cols, &ev.record_data).as_deref() != Some(key) {
                continue;
            }
            // several writes of one commit share a timestamp; the later one in capture order wins
            if best.is_none_or(|b| ev.timestamp >= b.timestamp) {
                best = Some(ev);
            }
        }
        let ev = best.ok_or(QueryError::NoHistory)?;
        Ok(match ev.event_type {
            EventType::Delete => RecordState::Deleted { timestamp: ev.timestamp },
            _ => RecordState::Present { timestamp: ev.timestamp, row: ev.record_data.clone() },
        })
    }

    /// Records written by functions named in `successors` within workflows
    /// that, in a committed transaction, read record `key` of `table`.
    /// A fused unit matches if any member function is named.
    pub fn query_downstream(&self, table: &str, key: &[Json], successors: &[&str]) -> Result<BTreeSet<RecordId>, QueryError> {
        let cols = self.key_columns(table, key)?;
        let committed: HashSet<&str> = self.commits.iter().map(|c| c.func_id.as_str()).collect();
        let workflow_of: HashMap<&str, &str> =
            self.invocations.iter().map(|i| (i.func_id.as_str(), i.workflow_id.as_str())).collect();

        let workflows: HashSet<&str> = self
            .events(table)
            .iter()
            .filter(|ev| ev.event_type == EventType::Read && committed.contains(ev.func_id.as_str()))
            .filter(|ev| Self::key_of(cols, &ev.record_data).as_deref() == Some(key))
            .filter_map(|ev| workflow_of.get(ev.func_id.as_str()).copied())
            .collect();

        let wanted: HashSet<&str> = self
            .invocations
            .iter()
            .filter(|i| workflows.contains(i.workflow_id.as_str()))
            .filter(|i| i.function_name.split('+').any(|member| successors.contains(&member)))
            .map(|i| i.func_id.as_str())
            .collect();

        let mut out = BTreeSet::new();
        for (t, events) in &self.table_events {
            let Some(tcols) = self.tables.get(t) else { continue };
            for ev in events {
                if ev.event_type.is_write() && wanted.contains(ev.func_id.as_str()) {
                    if let Some(k) = Self::key_of(tcols, &ev.record_data) {
                        out.insert(RecordId { table: t.clone(), key: Json::Array(k).to_string() });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(func: &str, ts: u64, ty: EventType, k: i64, v: i64) -> TableEvent {
        let mut record_data = Map::new();
        record_data.insert("k".into(), Json::from(k));
        if ty != EventType::Read {
            record_data.insert("v".into(), Json::from(v));
        }
        TableEvent { func_id: func.into(), timestamp: ts, event_type: ty, query: String::new(), record_data }
    }

    fn store() -> EventStore {
        let mut s = EventStore::default();
        s.tables.insert("T".into(), vec!["k".into()]);
        s.table_events.insert(
            "T".into(),
            vec![
                write("a", 5, EventType::Insert, 1, 1),
                write("b", 9, EventType::Update, 1, 2),
                write("c", 12, EventType::Delete, 1, 2),
            ],
        );
        s
    }

    #[test]
    fn record_state_ordering() {
        let s = store();
        let k = [Json::from(1)];
        match s.query_record_state("T", &k, 7).unwrap() {
            RecordState::Present { row, .. } => assert_eq!(row["v"], 1),
            other => panic!("{other:?}"),
        }
        match s.query_record_state("T", &k, 9).unwrap() {
            RecordState::Present { row, .. } => assert_eq!(row["v"], 2),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.query_record_state("T", &k, 20).unwrap(), RecordState::Deleted { timestamp: 12 });
        assert!(matches!(s.query_record_state("T", &k, 4), Err(QueryError::NoHistory)));
        assert!(matches!(s.query_record_state("T", &[Json::from(2)], 20), Err(QueryError::NoHistory)));
        assert!(matches!(s.query_record_state("U", &k, 20), Err(QueryError::UnknownTable(_))));
    }

    #[test]
    fn downstream_requires_committed_read() {
        let mut s = EventStore::default();
        s.tables.insert("Item".into(), vec!["k".into()]);
        s.tables.insert("Orders".into(), vec!["k".into()]);
        let inv = |f: &str, name: &str, w: &str| FunctionInvocationEvent {
            func_id: f.into(),
            timestamp: 0,
            function_name: name.into(),
            workflow_name: "wf".into(),
            workflow_id: w.into(),
        };
        s.invocations = vec![inv("1:1:1", "browse", "1:1"), inv("1:1:2", "a+checkout", "1:1"), inv("1:2:1", "browse", "1:2"), inv("1:2:2", "checkout", "1:2")];
        s.commits = vec![CommitMarker { func_id: "1:1:1".into(), timestamp: 1 }];
        s.table_events.insert(
            "Item".into(),
            vec![write("1:1:1", 1, EventType::Read, 7, 0), write("1:2:1", 1, EventType::Read, 7, 0)],
        );
        s.table_events.insert(
            "Orders".into(),
            vec![write("1:1:2", 3, EventType::Insert, 100, 0), write("1:2:2", 4, EventType::Insert, 200, 0)],
        );
        let got = s.query_downstream("Item", &[Json::from(7)], &["checkout"]).unwrap();
        assert_eq!(got.into_iter().map(|r| r.key).collect::<Vec<_>>(), vec!["[100]".to_string()]);
        assert!(s.query_downstream("Item", &[Json::from(8)], &["checkout"]).unwrap().is_empty());
    }
}
