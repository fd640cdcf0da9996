//! Functions, workflows and their compilation into executable units.
//!
//! A [`FunctionDef`] declares every prepared statement it may run, its named
//! inputs and outputs, and a body. [`create_workflow`] wires functions into a
//! DAG with a single sink, [`WorkflowGraph::group_functions`] marks connected
//! subgraphs that must run as one transaction, and [`register`] fuses each
//! group into one unit and decides which units record their outputs.

mod compile;
mod context;
pub mod doc;
mod graph;
mod ports;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compile::{register, RecordingPolicy, RegisteredWorkflow, Unit, UnitInput};
pub use context::{FunctionContext, Input};
pub use graph::{create_workflow, Source, Targets, WiringSpec, WorkflowGraph};
pub use ports::{ExternalPorts, IdempotentPort, PortHandler};

use crate::engine::{EngineError, PreparedStatement};

/// Signature of a function body.
pub type Body = Arc<dyn for<'a, 'e> Fn(&mut FunctionContext<'a, 'e>) -> Result<(), FunctionError> + Send + Sync>;

/// A function: statically declared statements, named inputs and outputs, an
/// optional site hint and a body.
#[derive(Clone)]
pub struct FunctionDef {
    pub name: String,
    pub statements: Vec<PreparedStatement>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Input whose value (or first list element) selects the partition the
    /// function's transaction runs on.
    pub site_hint: Option<String>,
    /// Whether the body runs when an input carries an upstream failure.
    pub handles_failures: bool,
    pub body: Body,
}

impl fmt::Debug for FunctionDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionDef")
            .field("name", &self.name)
            .field("statements", &self.statements.iter().map(|s| &s.id).collect::<Vec<_>>())
            .field("inputs", &self.inputs)
            .field("outputs", &self.outputs)
            .field("site_hint", &self.site_hint)
            .finish()
    }
}

fn no_body(_: &mut FunctionContext<'_, '_>) -> Result<(), FunctionError> {
    Ok(())
}

impl FunctionDef {
    pub fn new(name: impl Into<String>) -> Self {
        FunctionDef {
            name: name.into(),
            statements: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            site_hint: None,
            handles_failures: false,
            body: Arc::new(no_body),
        }
    }

    pub fn statement(mut self, stmt: PreparedStatement) -> Self {
        self.statements.push(stmt);
        self
    }

    pub fn input(mut self, name: impl Into<String>) -> Self {
        self.inputs.push(name.into());
        self
    }

    pub fn output(mut self, name: impl Into<String>) -> Self {
        self.outputs.push(name.into());
        self
    }

    pub fn site_hint(mut self, input: impl Into<String>) -> Self {
        self.site_hint = Some(input.into());
        self
    }

    pub fn handles_failures(mut self) -> Self {
        self.handles_failures = true;
        self
    }

    pub fn body<F>(mut self, f: F) -> Self
    where
        F: for<'a, 'e> Fn(&mut FunctionContext<'a, 'e>) -> Result<(), FunctionError> + Send + Sync + 'static,
    {
        self.body = Arc::new(f);
        self
    }

    /// True iff any declared statement writes.
    pub fn has_write(&self) -> bool {
        self.statements.iter().any(|s| !s.is_read_only())
    }

    pub fn find_statement(&self, id: &str) -> Option<&PreparedStatement> {
        self.statements.iter().find(|s| s.id == id)
    }
}

/// Failure notification carried along data edges in place of a value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Failure {
    pub unit: String,
    pub error_class: String,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed ({}): {}", self.unit, self.error_class, self.message)
    }
}

/// Errors raised while a function body runs.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FunctionError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{function} executed undeclared statement {statement}")]
    UndeclaredStatement { function: String, statement: String },
    #[error("unknown input {0}")]
    UnknownInput(String),
    #[error("unknown output {0}")]
    UnknownOutput(String),
    #[error("output {0} was never returned")]
    MissingOutput(String),
    #[error("input {input}: {reason}")]
    InvalidInput { input: String, reason: String },
    #[error("input carries an upstream failure: {0}")]
    UpstreamFailure(Failure),
    #[error("unknown external port {0}")]
    UnknownPort(String),
    #[error("external port {port}: {message}")]
    External { port: String, message: String },
    #[error("{0}")]
    Failed(String),
    /// Retryable failure that leaves no effects.
    #[error("transient: {0}")]
    Transient(String),
}

impl FunctionError {
    pub fn is_retryable(&self) -> bool {
        match self {
            FunctionError::Engine(e) => e.is_retryable(),
            FunctionError::Transient(_) => true,
            _ => false,
        }
    }

    pub fn class(&self) -> String {
        match self {
            FunctionError::Engine(e) => e.class().to_owned(),
            FunctionError::UndeclaredStatement { .. } => "UndeclaredStatement".into(),
            FunctionError::UnknownInput(_) => "UnknownInput".into(),
            FunctionError::UnknownOutput(_) => "UnknownOutput".into(),
            FunctionError::MissingOutput(_) => "MissingOutput".into(),
            FunctionError::InvalidInput { .. } => "InvalidInput".into(),
            FunctionError::UpstreamFailure(_) => "UpstreamFailure".into(),
            FunctionError::UnknownPort(_) => "UnknownPort".into(),
            FunctionError::External { .. } => "External".into(),
            FunctionError::Failed(_) => "Failed".into(),
            FunctionError::Transient(_) => "Transient".into(),
        }
    }
}

/// Errors in building, grouping or registering a workflow.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkflowError {
    #[error("workflow has no functions")]
    EmptyWorkflow,
    #[error("duplicate name {0}")]
    DuplicateName(String),
    #[error("unknown name {0}")]
    UnknownName(String),
    #[error("name {0} matches several functions; qualify it as function.name")]
    AmbiguousName(String),
    #[error("input {0} is not wired")]
    UnwiredInput(String),
    #[error("input {0} is wired more than once")]
    MultiplyWired(String),
    #[error("workflow graph has a cycle through {0}")]
    CycleDetected(String),
    #[error("workflow has several sinks: {0:?}")]
    MultipleSinks(Vec<String>),
    #[error("workflow output {0} is not produced by the sink")]
    DanglingOutput(String),
    #[error("unknown function {0}")]
    UnknownNode(String),
    #[error("group {0:?} is not a connected subgraph")]
    NotConnected(Vec<String>),
    #[error("function {0} is already in a group")]
    OverlappingGroups(String),
    #[error("fusing group {0:?} would create a cycle")]
    GroupCreatesCycle(Vec<String>),
    #[error("conflicting site hints in {unit}: {reason}")]
    SiteHintConflict { unit: String, reason: String },
    #[error("site hint {hint} of {function} is not one of its inputs")]
    InvalidSiteHint { function: String, hint: String },
    #[error("invalid statement in {function}: {reason}")]
    InvalidStatement { function: String, reason: String },
    #[error("invalid workflow document: {0}")]
    InvalidDocument(String),
}

#[cfg(test)]
mod tests;
