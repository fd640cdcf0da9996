use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::value::ValueType;

/// Tables whose names start with this prefix belong to the runtime itself and
/// are never traced.
pub const SYSTEM_PREFIX: &str = "__";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub ty: ValueType,
}

/// How a partitioned table maps its partition column onto a partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Routing {
    /// `hash(value) mod partitions`.
    #[default]
    Hash,
    /// The column holds the partition index itself (`Int64`).
    Direct,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    pub primary_key: Vec<String>,
    #[serde(default)]
    pub partition_column: Option<String>,
    #[serde(default)]
    pub secondary_indexes: Vec<Vec<String>>,
    #[serde(default)]
    pub routing: Routing,
}

impl TableSchema {
    pub fn new(name: impl Into<String>) -> Self {
        TableSchema {
            name: name.into(),
            columns: Vec::new(),
            primary_key: Vec::new(),
            partition_column: None,
            secondary_indexes: Vec::new(),
            routing: Routing::Hash,
        }
    }

    pub fn column(mut self, name: impl Into<String>, ty: ValueType) -> Self {
        self.columns.push(ColumnDef { name: name.into(), ty });
        self
    }

    pub fn primary_key<I, S>(mut self, cols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.primary_key = cols.into_iter().map(Into::into).collect();
        self
    }

    pub fn partition_by(mut self, col: impl Into<String>) -> Self {
        self.partition_column = Some(col.into());
        self
    }

    pub fn route_direct(mut self) -> Self {
        self.routing = Routing::Direct;
        self
    }

    pub fn index<I, S>(mut self, cols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.secondary_indexes.push(cols.into_iter().map(Into::into).collect());
        self
    }

    pub fn is_system(&self) -> bool {
        self.name.starts_with(SYSTEM_PREFIX)
    }

    pub fn is_replicated(&self) -> bool {
        self.partition_column.is_none()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// A validated schema with column positions resolved.
#[derive(Debug, Clone)]
pub struct TableMeta {
    pub schema: TableSchema,
    /// Column positions of the primary key, in key order.
    pub pk: Vec<usize>,
    /// Column position of the partition column.
    pub part: Option<usize>,
    /// Position of the partition column inside the primary key.
    pub part_in_key: Option<usize>,
    pub indexes: Vec<Vec<usize>>,
}

impl TableMeta {
    pub fn new(schema: TableSchema) -> Result<Self, EngineError> {
        let invalid = |why: String| EngineError::InvalidSchema(format!("{}: {why}", schema.name));
        if schema.name.is_empty() {
            return Err(EngineError::InvalidSchema("empty table name".into()));
        }
        if schema.columns.is_empty() {
            return Err(invalid("no columns".into()));
        }
        let mut seen = HashSet::new();
        for c in &schema.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(invalid(format!("duplicate column {}", c.name)));
            }
        }
        if schema.primary_key.is_empty() {
            return Err(invalid("empty primary key".into()));
        }
        let resolve = |name: &str| {
            schema
                .column_index(name)
                .ok_or_else(|| invalid(format!("unknown column {name}")))
        };
        let pk = schema
            .primary_key
            .iter()
            .map(|c| resolve(c))
            .collect::<Result<Vec<_>, _>>()?;
        if pk.iter().collect::<HashSet<_>>().len() != pk.len() {
            return Err(invalid("duplicate primary key column".into()));
        }
        let (part, part_in_key) = match &schema.partition_column {
            None => (None, None),
            Some(col) => {
                let idx = resolve(col)?;
                let in_key = pk
                    .iter()
                    .position(|&p| p == idx)
                    .ok_or_else(|| invalid(format!("partition column {col} is not in the primary key")))?;
                if schema.routing == Routing::Direct && schema.columns[idx].ty != ValueType::Int64 {
                    return Err(invalid("direct routing needs an Int64 partition column".into()));
                }
                (Some(idx), Some(in_key))
            }
        };
        let indexes = schema
            .secondary_indexes
            .iter()
            .map(|cols| {
                if cols.is_empty() {
                    return Err(invalid("empty secondary index".into()));
                }
                cols.iter().map(|c| resolve(c)).collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TableMeta { schema, pk, part, part_in_key, indexes })
    }

    pub fn name(&self) -> &str {
        &self.schema.name
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hotel_avail() -> TableSchema {
        TableSchema::new("HotelAvail")
            .column("hotelID", ValueType::Int64)
            .column("date", ValueType::Int64)
            .column("numAvail", ValueType::Int64)
            .primary_key(["hotelID", "date"])
            .partition_by("hotelID")
    }

    #[test]
    fn resolves_positions() {
        let meta = TableMeta::new(hotel_avail()).unwrap();
        assert_eq!(meta.pk, vec![0, 1]);
        assert_eq!(meta.part, Some(0));
        assert_eq!(meta.part_in_key, Some(0));
    }

    #[test]
    fn partition_column_must_be_in_key() {
        let err = TableMeta::new(hotel_avail().partition_by("numAvail")).unwrap_err();
        assert!(matches!(err, EngineError::InvalidSchema(_)));
    }

    #[test]
    fn empty_key_rejected() {
        let mut s = hotel_avail();
        s.primary_key.clear();
        assert!(matches!(TableMeta::new(s), Err(EngineError::InvalidSchema(_))));
    }

    #[test]
    fn duplicate_column_rejected() {
        let s = hotel_avail().column("date", ValueType::Text);
        assert!(matches!(TableMeta::new(s), Err(EngineError::InvalidSchema(_))));
    }
}
