//! Request and response bodies shared by the service and its clients.
//!
//! HTTP routes take and return these as JSON. The TCP protocol wraps the
//! connect, invoke and register calls in [`Request`] and [`Response`], one
//! JSON document per frame, each frame prefixed with its length as a 4-byte
//! big-endian integer.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::bench::BenchReport;
use crate::trace::export::ExportStats;
use crate::workflow::doc::WorkflowDoc;
use crate::workflow::RecordingPolicy;

/// Largest accepted frame on the TCP protocol.
pub const MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectResponse {
    pub client_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvokeRequest {
    pub workflow: String,
    /// `client_id:counter`; resubmissions reuse it.
    pub workflow_id: String,
    #[serde(default = "empty_object")]
    pub inputs: Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvokeResponse {
    pub workflow_id: String,
    /// `{"success": {...}}` or `{"failure": {"unit", "error_class", "message"}}`.
    pub outcome: Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub workflow: WorkflowDoc,
    #[serde(default)]
    pub policy: RecordingPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterResponse {
    pub name: String,
    pub inputs: Vec<String>,
    /// Function names per unit, in execution order.
    pub units: Vec<Vec<String>>,
    /// 1-based positions of the units that record their outputs.
    pub recorded: Vec<usize>,
    pub read_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfrRequest {
    pub workflow: WorkflowDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfrResponse {
    pub workflow: String,
    pub units: Vec<Vec<String>>,
    /// Names of the recorded units.
    pub recorded: Vec<String>,
    /// One line per unit saying why it is or is not recorded.
    pub explanation: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CheckRequest {
    /// Model-check every graph up to `max_units` units and all read/write
    /// labelings, sampling at most `cap` graphs of the largest size.
    Graphs { max_units: usize, cap: usize, seed: u64 },
    /// Random crash schedules against a workflow document.
    Workflow {
        workflow: WorkflowDoc,
        #[serde(default = "empty_object")]
        inputs: Json,
        schedules: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResponse {
    pub passed: bool,
    pub graphs: usize,
    pub schedules: usize,
    pub crashes_injected: usize,
    /// Replayable failures: graph or workflow, inputs and crash schedule.
    pub counterexamples: Vec<Json>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRequest {
    pub workload: String,
    pub ops: usize,
    pub concurrency: usize,
    pub seed: u64,
    #[serde(default)]
    pub policy: RecordingPolicy,
    #[serde(default)]
    pub trace: bool,
    /// Export directory for traced runs; the server picks one if unset.
    #[serde(default)]
    pub trace_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub dir: PathBuf,
    pub exported: u64,
    pub duplicates: u64,
    pub dropped: u64,
}

impl TraceSummary {
    pub fn new(dir: PathBuf, stats: ExportStats, dropped: u64) -> Self {
        TraceSummary { dir, exported: stats.exported, duplicates: stats.duplicates, dropped }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResponse {
    #[serde(flatten)]
    pub report: BenchReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateQuery {
    /// Exported trace directory; defaults to the server's own.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    pub table: String,
    pub key: Vec<Json>,
    pub ts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum StateResponse {
    Present { timestamp: u64, row: serde_json::Map<String, Json> },
    Deleted { timestamp: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamQuery {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    pub table: String,
    pub key: Vec<Json>,
    pub successors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRef {
    pub table: String,
    /// Primary key values in key column order.
    pub key: Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamResponse {
    pub records: Vec<RecordRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    /// Stable machine-readable class, e.g. `unknown_workflow`.
    pub kind: String,
    pub message: String,
}

impl ApiError {
    pub fn new(kind: impl Into<String>, message: impl ToString) -> Self {
        ApiError { kind: kind.into(), message: message.to_string() }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for ApiError {}

/// A TCP protocol request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum Request {
    Connect,
    Invoke(InvokeRequest),
    Register(RegisterRequest),
}

/// A TCP protocol response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reply")]
pub enum Response {
    Connected(ConnectResponse),
    Invoked(InvokeResponse),
    Registered(RegisterResponse),
    Error(ApiError),
}

fn empty_object() -> Json {
    Json::Object(Default::default())
}
