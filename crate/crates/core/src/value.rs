//! Scalar values stored in tables and passed between functions.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde_json::Value as Json;

/// The column types a table may declare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ValueType {
    Int64,
    Float64,
    Text,
    Bool,
    Timestamp,
}

/// A single relational value.
///
/// Ordering is total so values can serve as index keys: variants order by
/// their declaration position, floats by `f64::total_cmp`. Predicate matching
/// goes through [`Value::matches`], where `Null` never matches anything.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Int64(i64),
    Float64(f64),
    Text(String),
    Bool(bool),
    /// Logical microseconds since engine start.
    Timestamp(u64),
}

impl Value {
    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Int64(_) => 1,
            Value::Float64(_) => 2,
            Value::Text(_) => 3,
            Value::Bool(_) => 4,
            Value::Timestamp(_) => 5,
        }
    }

    pub fn value_type(&self) -> Option<ValueType> {
        match self {
            Value::Null => None,
            Value::Int64(_) => Some(ValueType::Int64),
            Value::Float64(_) => Some(ValueType::Float64),
            Value::Text(_) => Some(ValueType::Text),
            Value::Bool(_) => Some(ValueType::Bool),
            Value::Timestamp(_) => Some(ValueType::Timestamp),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Equality as used by `column = ?` predicates.
    pub fn matches(&self, other: &Value) -> bool {
        if self.is_null() || other.is_null() {
            return false;
        }
        self == other
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int64(v) => Some(*v),
            Value::Timestamp(v) => Some(*v as i64),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Float64(v) => Some(*v),
            Value::Int64(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Json {
        match self {
            Value::Null => Json::Null,
            Value::Int64(v) => Json::from(*v),
            Value::Float64(v) => serde_json::Number::from_f64(*v)
                .map(Json::Number)
                .unwrap_or(Json::Null),
            Value::Text(s) => Json::String(s.clone()),
            Value::Bool(b) => Json::Bool(*b),
            Value::Timestamp(t) => Json::from(*t),
        }
    }

    /// Maps a JSON scalar onto a value. Integers become `Int64`, other numbers
    /// `Float64`. Arrays and objects are rejected.
    pub fn from_json(json: &Json) -> Option<Value> {
        Some(match json {
            Json::Null => Value::Null,
            Json::Bool(b) => Value::Bool(*b),
            Json::Number(n) => match n.as_i64() {
                Some(i) => Value::Int64(i),
                None => Value::Float64(n.as_f64()?),
            },
            Json::String(s) => Value::Text(s.clone()),
            Json::Array(_) | Json::Object(_) => return None,
        })
    }

    /// Coerces a JSON scalar to a specific column type, so `42` can fill a
    /// `Timestamp` column and `3` a `Float64` one.
    pub fn from_json_typed(json: &Json, ty: ValueType) -> Option<Value> {
        if json.is_null() {
            return Some(Value::Null);
        }
        Some(match ty {
            ValueType::Int64 => Value::Int64(json.as_i64()?),
            ValueType::Float64 => Value::Float64(json.as_f64()?),
            ValueType::Text => Value::Text(json.as_str()?.to_owned()),
            ValueType::Bool => Value::Bool(json.as_bool()?),
            ValueType::Timestamp => Value::Timestamp(json.as_u64()?),
        })
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Int64(a), Value::Int64(b)) => a.cmp(b),
            (Value::Float64(a), Value::Float64(b)) => a.total_cmp(b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Timestamp(a), Value::Timestamp(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Value::Null => {}
            Value::Int64(v) => v.hash(state),
            Value::Float64(v) => v.to_bits().hash(state),
            Value::Text(s) => s.hash(state),
            Value::Bool(b) => b.hash(state),
            Value::Timestamp(t) => t.hash(state),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Int64(v) => write!(f, "{v}"),
            Value::Float64(v) => write!(f, "{v}"),
            Value::Text(s) => write!(f, "'{s}'"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Timestamp(t) => write!(f, "ts:{t}"),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int64(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float64(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

/// A named function input or output: a scalar or a list of scalars.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Datum {
    Value(Value),
    List(Vec<Value>),
}

impl Datum {
    pub fn as_value(&self) -> Option<&Value> {
        match self {
            Datum::Value(v) => Some(v),
            Datum::List(_) => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Datum::List(l) => Some(l),
            Datum::Value(_) => None,
        }
    }

    /// The scalar used for partition routing: the value itself, or the first
    /// element of a list.
    pub fn routing_value(&self) -> Option<&Value> {
        match self {
            Datum::Value(v) => Some(v),
            Datum::List(l) => l.first(),
        }
    }

    pub fn to_json(&self) -> Json {
        match self {
            Datum::Value(v) => v.to_json(),
            Datum::List(l) => Json::Array(l.iter().map(Value::to_json).collect()),
        }
    }

    pub fn from_json(json: &Json) -> Option<Datum> {
        match json {
            Json::Array(items) => items
                .iter()
                .map(Value::from_json)
                .collect::<Option<Vec<_>>>()
                .map(Datum::List),
            other => Value::from_json(other).map(Datum::Value),
        }
    }
}

impl<T: Into<Value>> From<T> for Datum {
    fn from(v: T) -> Self {
        Datum::Value(v.into())
    }
}

impl From<Vec<Value>> for Datum {
    fn from(v: Vec<Value>) -> Self {
        Datum::List(v)
    }
}
