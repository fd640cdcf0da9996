//! Transactional function runtime: an embedded partitioned store, workflows
//! of functions with exactly-once execution through selective recording of
//! unit outputs, and automatic tracing of every data access.

pub mod api;
pub mod bench;
pub mod codec;
pub mod config;
pub mod dispatcher;
pub mod engine;
pub mod harness;
pub mod sfr;
pub mod trace;
pub mod value;
pub mod workflow;

pub use engine::{Engine, EngineConfig, EngineError, PreparedStatement, TableSchema, TxnMode};
pub use value::{Datum, Value, ValueType};
