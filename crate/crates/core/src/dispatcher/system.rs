//! Runtime-owned tables and the encoding of recorded outcomes.

use std::collections::BTreeMap;

use serde_json::Value as Json;

use super::Outcome;
use crate::codec::{CodecError, Decoder, Encoder};
use crate::engine::{Engine, EngineError, PreparedStatement, TableSchema};
use crate::value::ValueType;
use crate::workflow::Failure;

pub const RECORDS: &str = "__recorded_outputs";
pub const RESULTS: &str = "__workflow_results";
pub const SEQUENCES: &str = "__sequences";

const TAG_SUCCESS: u8 = 0x30;
const TAG_FAILURE: u8 = 0x31;

/// Outputs of recorded units, keyed by the partition the unit ran on and its
/// func_id, so the lookup and insert happen in the unit's own transaction.
pub fn records_schema() -> TableSchema {
    TableSchema::new(RECORDS)
        .column("site", ValueType::Int64)
        .column("func_id", ValueType::Text)
        .column("workflow_id", ValueType::Text)
        .column("output", ValueType::Text)
        .primary_key(["site", "func_id"])
        .partition_by("site")
        .route_direct()
}

/// Final outcome of every completed workflow, for answering resubmissions.
/// `records` lists the `site:func_id` keys of the workflow's recorded
/// outputs, which are deleted together with the result once it expires.
pub fn results_schema() -> TableSchema {
    TableSchema::new(RESULTS)
        .column("workflow_id", ValueType::Text)
        .column("outcome", ValueType::Text)
        .column("completed_at", ValueType::Int64)
        .column("records", ValueType::Text)
        .primary_key(["workflow_id"])
        .partition_by("workflow_id")
}

pub fn sequences_schema() -> TableSchema {
    TableSchema::new(SEQUENCES)
        .column("name", ValueType::Text)
        .column("next", ValueType::Int64)
        .primary_key(["name"])
        .partition_by("name")
}

pub fn ensure_tables(engine: &Engine) -> Result<(), EngineError> {
    for schema in [records_schema(), results_schema(), sequences_schema()] {
        if !engine.has_table(&schema.name) {
            match engine.create_table(schema) {
                Ok(()) | Err(EngineError::DuplicateTable(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(())
}

pub struct Statements {
    pub record_get: PreparedStatement,
    pub record_put: PreparedStatement,
    pub record_del: PreparedStatement,
    pub result_get: PreparedStatement,
    pub result_put: PreparedStatement,
    pub result_scan: PreparedStatement,
    pub result_del: PreparedStatement,
    pub seq_get: PreparedStatement,
    pub seq_put: PreparedStatement,
    pub seq_set: PreparedStatement,
}

impl Statements {
    pub fn new() -> Self {
        Statements {
            record_get: PreparedStatement::select_by_key("record_get", RECORDS, ["site", "func_id"]).columns(["output"]),
            record_put: PreparedStatement::insert("record_put", RECORDS),
            record_del: PreparedStatement::delete("record_del", RECORDS, ["site", "func_id"]),
            result_get: PreparedStatement::select_by_key("result_get", RESULTS, ["workflow_id"]).columns(["outcome"]),
            result_put: PreparedStatement::insert("result_put", RESULTS),
            result_scan: PreparedStatement::select("result_scan", RESULTS, Vec::<String>::new())
                .columns(["workflow_id", "completed_at", "records"]),
            result_del: PreparedStatement::delete("result_del", RESULTS, ["workflow_id"]),
            seq_get: PreparedStatement::select_by_key("seq_get", SEQUENCES, ["name"]).columns(["next"]),
            seq_put: PreparedStatement::insert("seq_put", SEQUENCES),
            seq_set: PreparedStatement::update("seq_set", SEQUENCES, ["next"], ["name"]),
        }
    }
}

pub fn encode_outcome(outcome: &Outcome) -> String {
    let mut e = Encoder::new();
    match outcome {
        Outcome::Success(map) => {
            e.tag(TAG_SUCCESS).named(map);
        }
        Outcome::Failure(f) => {
            e.tag(TAG_FAILURE).str(&f.unit).str(&f.error_class).str(&f.message);
        }
    }
    hex::encode(e.finish())
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("record is not hex")]
    Hex,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("unknown outcome tag {0:#04x}")]
    Tag(u8),
}

pub fn decode_outcome(text: &str) -> Result<Outcome, DecodeError> {
    let bytes = hex::decode(text).map_err(|_| DecodeError::Hex)?;
    let mut d = Decoder::new(&bytes);
    let outcome = match d.tag()? {
        TAG_SUCCESS => Outcome::Success(d.named()?),
        TAG_FAILURE => Outcome::Failure(Failure { unit: d.str()?, error_class: d.str()?, message: d.str()? }),
        t => return Err(DecodeError::Tag(t)),
    };
    d.finish()?;
    Ok(outcome)
}

impl Outcome {
    pub fn to_json(&self) -> Json {
        match self {
            Outcome::Success(map) => serde_json::json!({ "success": crate::workflow::doc::outputs_to_json(map) }),
            Outcome::Failure(f) => serde_json::json!({ "failure": f }),
        }
    }

    pub fn from_json(json: &Json) -> Option<Outcome> {
        if let Some(s) = json.get("success") {
            let map = crate::workflow::doc::inputs_from_json(s).ok()?;
            return Some(Outcome::Success(map));
        }
        let f = json.get("failure")?;
        serde_json::from_value(f.clone()).ok().map(Outcome::Failure)
    }

    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success(_))
    }

    pub fn outputs(&self) -> Option<&BTreeMap<String, crate::value::Datum>> {
        match self {
            Outcome::Success(m) => Some(m),
            Outcome::Failure(_) => None,
        }
    }

    /// Canonical bytes, equal for equal outcomes.
    pub fn encode(&self) -> Vec<u8> {
        hex::decode(encode_outcome(self)).expect("own encoding")
    }
}
