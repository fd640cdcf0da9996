use std::collections::{BTreeMap, BTreeSet};

use super::schema::TableMeta;
use crate::value::Value;

pub type Key = Vec<Value>;
pub type Row = Vec<Value>;

/// Committed rows of one table on one partition, with secondary indexes.
#[derive(Debug, Clone, Default)]
pub(crate) struct TableData {
    pub rows: BTreeMap<Key, Row>,
    indexes: Vec<BTreeMap<Vec<Value>, BTreeSet<Key>>>,
}

pub(crate) fn key_of(meta: &TableMeta, row: &[Value]) -> Key {
    meta.pk.iter().map(|&i| row[i].clone()).collect()
}

fn project(cols: &[usize], row: &[Value]) -> Vec<Value> {
    cols.iter().map(|&i| row[i].clone()).collect()
}

impl TableData {
    pub fn new(meta: &TableMeta) -> Self {
        TableData { rows: BTreeMap::new(), indexes: vec![BTreeMap::new(); meta.indexes.len()] }
    }

    pub fn get(&self, key: &Key) -> Option<&Row> {
        self.rows.get(key)
    }

    pub fn put(&mut self, meta: &TableMeta, key: Key, row: Row) {
        if let Some(old) = self.rows.get(&key) {
            let old = old.clone();
            self.unindex(meta, &key, &old);
        }
        for (i, cols) in meta.indexes.iter().enumerate() {
            self.indexes[i].entry(project(cols, &row)).or_default().insert(key.clone());
        }
        self.rows.insert(key, row);
    }

    pub fn remove(&mut self, meta: &TableMeta, key: &Key) {
        if let Some(old) = self.rows.remove(key) {
            self.unindex(meta, key, &old);
        }
    }

    fn unindex(&mut self, meta: &TableMeta, key: &Key, row: &[Value]) {
        for (i, cols) in meta.indexes.iter().enumerate() {
            let ik = project(cols, row);
            if let Some(set) = self.indexes[i].get_mut(&ik) {
                set.remove(key);
                if set.is_empty() {
                    self.indexes[i].remove(&ik);
                }
            }
        }
    }

    /// Keys of committed rows that may satisfy `bindings` (column position,
    /// value). The caller still filters by the full predicate.
    pub fn candidates(&self, meta: &TableMeta, bindings: &[(usize, Value)]) -> Vec<Key> {
        let bound = |col: usize| bindings.iter().find(|(c, _)| *c == col).map(|(_, v)| v);
        let prefix: Vec<Value> = meta.pk.iter().map_while(|&c| bound(c).cloned()).collect();
        if prefix.len() == meta.pk.len() {
            return if self.rows.contains_key(&prefix) { vec![prefix] } else { Vec::new() };
        }
        if !prefix.is_empty() {
            return self
                .rows
                .range(prefix.clone()..)
                .take_while(|(k, _)| k.starts_with(&prefix))
                .map(|(k, _)| k.clone())
                .collect();
        }
        for (i, cols) in meta.indexes.iter().enumerate() {
            let ik: Option<Vec<Value>> = cols.iter().map(|&c| bound(c).cloned()).collect();
            if let Some(ik) = ik {
                return self.indexes[i].get(&ik).map(|s| s.iter().cloned().collect()).unwrap_or_default();
            }
        }
        self.rows.keys().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::schema::TableSchema;
    use crate::value::ValueType;

    fn meta() -> TableMeta {
        TableMeta::new(
            TableSchema::new("T")
                .column("a", ValueType::Int64)
                .column("b", ValueType::Int64)
                .column("c", ValueType::Text)
                .primary_key(["a", "b"])
                .index(["c"]),
        )
        .unwrap()
    }

    fn row(a: i64, b: i64, c: &str) -> Row {
        vec![Value::Int64(a), Value::Int64(b), Value::Text(c.into())]
    }

    #[test]
    fn prefix_and_index_candidates() {
        let m = meta();
        let mut t = TableData::new(&m);
        for (a, b, c) in [(1, 1, "x"), (1, 2, "y"), (2, 1, "x")] {
            let r = row(a, b, c);
            t.put(&m, key_of(&m, &r), r);
        }
        assert_eq!(t.candidates(&m, &[(0, Value::Int64(1))]).len(), 2);
        assert_eq!(t.candidates(&m, &[(2, Value::Text("x".into()))]).len(), 2);
        assert_eq!(t.candidates(&m, &[(0, Value::Int64(2)), (1, Value::Int64(1))]).len(), 1);
        assert_eq!(t.candidates(&m, &[]).len(), 3);

        // index follows updates and deletes
        let r = row(1, 1, "z");
        t.put(&m, key_of(&m, &r), r);
        assert_eq!(t.candidates(&m, &[(2, Value::Text("x".into()))]).len(), 1);
        t.remove(&m, &vec![Value::Int64(2), Value::Int64(1)]);
        assert!(t.candidates(&m, &[(2, Value::Text("x".into()))]).is_empty());
    }
}
