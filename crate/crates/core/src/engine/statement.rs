use serde::{Deserialize, Serialize};

use super::schema::TableMeta;
use super::EngineError;
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatementKind {
    SelectByKey,
    SelectByPredicate,
    Insert,
    Update,
    Delete,
}

impl StatementKind {
    pub fn is_read_only(self) -> bool {
        matches!(self, StatementKind::SelectByKey | StatementKind::SelectByPredicate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortOrder {
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrderBy {
    pub column: String,
    pub order: SortOrder,
}

/// A parameterized statement. Placeholders are positional:
///
/// * selects and deletes take one parameter per predicate column;
/// * inserts take one parameter per inserted column (all columns in schema
///   order when `columns` is empty);
/// * updates take the `set` parameters first, then the predicate ones.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PreparedStatement {
    pub id: String,
    pub kind: StatementKind,
    pub table: String,
    /// Projection for selects, column list for inserts.
    #[serde(default)]
    pub columns: Vec<String>,
    #[serde(default)]
    pub predicate: Vec<String>,
    #[serde(default)]
    pub order_by: Option<OrderBy>,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub set: Vec<String>,
}

fn strings<I, S>(it: I) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    it.into_iter().map(Into::into).collect()
}

impl PreparedStatement {
    fn base(id: impl Into<String>, kind: StatementKind, table: impl Into<String>) -> Self {
        PreparedStatement {
            id: id.into(),
            kind,
            table: table.into(),
            columns: Vec::new(),
            predicate: Vec::new(),
            order_by: None,
            limit: None,
            set: Vec::new(),
        }
    }

    /// Point lookup; `key` must name exactly the table's primary key columns.
    pub fn select_by_key<I, S>(id: impl Into<String>, table: impl Into<String>, key: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut s = Self::base(id, StatementKind::SelectByKey, table);
        s.predicate = strings(key);
        s
    }

    pub fn select<I, S>(id: impl Into<String>, table: impl Into<String>, predicate: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut s = Self::base(id, StatementKind::SelectByPredicate, table);
        s.predicate = strings(predicate);
        s
    }

    pub fn insert(id: impl Into<String>, table: impl Into<String>) -> Self {
        Self::base(id, StatementKind::Insert, table)
    }

    pub fn update<I, S, J, T>(id: impl Into<String>, table: impl Into<String>, set: I, predicate: J) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
        J: IntoIterator<Item = T>,
        T: Into<String>,
    {
        let mut s = Self::base(id, StatementKind::Update, table);
        s.set = strings(set);
        s.predicate = strings(predicate);
        s
    }

    pub fn delete<I, S>(id: impl Into<String>, table: impl Into<String>, predicate: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut s = Self::base(id, StatementKind::Delete, table);
        s.predicate = strings(predicate);
        s
    }

    pub fn columns<I, S>(mut self, cols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.columns = strings(cols);
        self
    }

    pub fn order_by(mut self, column: impl Into<String>, order: SortOrder) -> Self {
        self.order_by = Some(OrderBy { column: column.into(), order });
        self
    }

    pub fn limit(mut self, n: usize) -> Self {
        self.limit = Some(n);
        self
    }

    pub fn is_read_only(&self) -> bool {
        self.kind.is_read_only()
    }

    /// Human-readable SQL-like text, used as the `query` field of trace events.
    pub fn sql(&self) -> String {
        let pred = if self.predicate.is_empty() {
            String::new()
        } else {
            let terms: Vec<String> = self.predicate.iter().map(|c| format!("{c}=?")).collect();
            format!(" WHERE {}", terms.join(" AND "))
        };
        match self.kind {
            StatementKind::SelectByKey | StatementKind::SelectByPredicate => {
                let proj = if self.columns.is_empty() { "*".to_string() } else { self.columns.join(", ") };
                let mut s = format!("SELECT {proj} FROM {}{pred}", self.table);
                if let Some(o) = &self.order_by {
                    let dir = match o.order {
                        SortOrder::Asc => "ASC",
                        SortOrder::Desc => "DESC",
                    };
                    s.push_str(&format!(" ORDER BY {} {dir}", o.column));
                }
                if let Some(n) = self.limit {
                    s.push_str(&format!(" LIMIT {n}"));
                }
                s
            }
            StatementKind::Insert => {
                if self.columns.is_empty() {
                    format!("INSERT INTO {} VALUES (...)", self.table)
                } else {
                    let marks = vec!["?"; self.columns.len()].join(", ");
                    format!("INSERT INTO {} ({}) VALUES ({marks})", self.table, self.columns.join(", "))
                }
            }
            StatementKind::Update => {
                let sets: Vec<String> = self.set.iter().map(|c| format!("{c}=?")).collect();
                format!("UPDATE {} SET {}{pred}", self.table, sets.join(", "))
            }
            StatementKind::Delete => format!("DELETE FROM {}{pred}", self.table),
        }
    }

    pub(crate) fn bind(&self, meta: &TableMeta) -> Result<BoundStatement, EngineError> {
        let invalid = |reason: String| EngineError::InvalidStatement { id: self.id.clone(), reason };
        let resolve = |name: &str| {
            meta.schema.column_index(name).ok_or_else(|| EngineError::UnknownColumn {
                table: meta.name().to_owned(),
                column: name.to_owned(),
            })
        };
        let predicate = self.predicate.iter().map(|c| resolve(c)).collect::<Result<Vec<_>, _>>()?;
        let mut sorted = predicate.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != predicate.len() {
            return Err(invalid("predicate names a column twice".into()));
        }
        let all: Vec<usize> = (0..meta.schema.columns.len()).collect();
        let columns = if self.columns.is_empty() {
            all
        } else {
            self.columns.iter().map(|c| resolve(c)).collect::<Result<Vec<_>, _>>()?
        };
        let set = self.set.iter().map(|c| resolve(c)).collect::<Result<Vec<_>, _>>()?;
        let order_by = match &self.order_by {
            Some(o) => Some((resolve(&o.column)?, o.order)),
            None => None,
        };
        if self.limit == Some(0) {
            return Err(invalid("limit must be positive".into()));
        }
        let arity = match self.kind {
            StatementKind::SelectByKey => {
                let mut pk = meta.pk.clone();
                pk.sort_unstable();
                if sorted != pk {
                    return Err(invalid("select_by_key predicate must be exactly the primary key".into()));
                }
                predicate.len()
            }
            StatementKind::SelectByPredicate | StatementKind::Delete => predicate.len(),
            StatementKind::Insert => {
                for pk in &meta.pk {
                    if !columns.contains(pk) {
                        return Err(invalid("insert must supply every primary key column".into()));
                    }
                }
                columns.len()
            }
            StatementKind::Update => {
                if set.is_empty() {
                    return Err(invalid("update without set clause".into()));
                }
                if set.iter().any(|c| meta.pk.contains(c)) {
                    return Err(invalid("update may not assign primary key columns".into()));
                }
                set.len() + predicate.len()
            }
        };
        Ok(BoundStatement { predicate, columns, set, order_by, arity })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BoundStatement {
    pub predicate: Vec<usize>,
    pub columns: Vec<usize>,
    pub set: Vec<usize>,
    pub order_by: Option<(usize, SortOrder)>,
    pub arity: usize,
}

/// One returned row: its full primary key plus the projected columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultRow {
    pub key: Vec<Value>,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<ResultRow>,
    /// Rows written by an insert, update or delete.
    pub affected: usize,
}

impl ResultSet {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// The value of `column` in the first row.
    pub fn first(&self, column: &str) -> Option<&Value> {
        let i = self.columns.iter().position(|c| c == column)?;
        self.rows.first().map(|r| &r.values[i])
    }

    pub fn column(&self, column: &str) -> Option<Vec<Value>> {
        let i = self.columns.iter().position(|c| c == column)?;
        Some(self.rows.iter().map(|r| r.values[i].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sql_rendering() {
        let s = PreparedStatement::select("q", "HotelAvail", ["hotelID", "date"]).columns(["numAvail"]);
        assert_eq!(s.sql(), "SELECT numAvail FROM HotelAvail WHERE hotelID=? AND date=?");
        let s = PreparedStatement::select("p", "Posts", ["user"]).order_by("id", SortOrder::Desc).limit(10);
        assert_eq!(s.sql(), "SELECT * FROM Posts WHERE user=? ORDER BY id DESC LIMIT 10");
        let u = PreparedStatement::update("u", "HotelAvail", ["numAvail"], ["hotelID", "date"]);
        assert_eq!(u.sql(), "UPDATE HotelAvail SET numAvail=? WHERE hotelID=? AND date=?");
    }

    #[test]
    fn read_only_classification() {
        assert!(StatementKind::SelectByKey.is_read_only());
        assert!(StatementKind::SelectByPredicate.is_read_only());
        assert!(!StatementKind::Insert.is_read_only());
        assert!(!StatementKind::Update.is_read_only());
        assert!(!StatementKind::Delete.is_read_only());
    }

    #[test]
    fn json_descriptor_defaults() {
        let s: PreparedStatement =
            serde_json::from_str(r#"{"id":"w","kind":"insert","table":"T"}"#).unwrap();
        assert_eq!(s, PreparedStatement::insert("w", "T"));
    }
}
