//! JSON workflow documents.
//!
//! ```json
//! {
//!   "name": "reservation",
//!   "tables": [ { "name": "HotelAvail", "columns": [...], "primary_key": [...], "partition_column": "hotelID" } ],
//!   "functions": [
//!     { "name": "checkAvail", "inputs": ["availIn"], "outputs": ["availOut"], "site_hint": "availIn",
//!       "statements": [ { "id": "q", "kind": "select_by_predicate", "table": "HotelAvail",
//!                         "columns": ["numAvail"], "predicate": ["hotelID", "date"] } ],
//!       "program": [ { "exec": "q", "params": [ {"input": "availIn", "index": 0}, {"input": "availIn", "index": 1} ], "bind": "r" },
//!                    { "output": "availOut", "value": {"var": "r", "column": "numAvail"} } ] }
//!   ],
//!   "wiring": { "in": "availIn", "availOut": "out" },
//!   "groups": [ ["checkAvail", "reserve"] ]
//! }
//! ```
//!
//! `tables` and `program` are optional. A function without a program runs no
//! statements and returns `null` for each output. Exported documents also
//! carry `order`, `edges` and `units`, which are ignored on import.
//!
//! Program steps run in order:
//! * `{"exec": stmt, "params": [operand...], "bind": var}` runs a declared statement;
//! * `{"call": port, "payload": operand, "bind": var}` calls an external port;
//! * `{"output": name, "value": operand}` returns an output.
//!
//! Operands are `{"input": name}` (optionally with `"index"` into a list),
//! `{"lit": json}`, `{"var": name}` (optionally with `"column"` for the first
//! row's value, plus `"all": true` for the whole column) and `{"count": var}`
//! (rows returned, or rows affected by a write).

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::{create_workflow, FunctionContext, FunctionDef, FunctionError, Source, WiringSpec, WorkflowError, WorkflowGraph};
use crate::engine::{Engine, EngineError, PreparedStatement, ResultSet, TableSchema};
use crate::value::{Datum, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowDoc {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tables: Vec<TableSchema>,
    pub functions: Vec<FunctionDoc>,
    pub wiring: WiringSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub order: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<EdgeDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub units: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionDoc {
    pub name: String,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub statements: Vec<PreparedStatement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_hint: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub handles_failures: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<Vec<Step>>,
}

/// A data-flow edge; endpoints are `function.name` or a bare workflow
/// input/output name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Step {
    Exec {
        exec: String,
        #[serde(default)]
        params: Vec<Operand>,
        #[serde(default)]
        bind: Option<String>,
    },
    Call {
        call: String,
        payload: Operand,
        #[serde(default)]
        bind: Option<String>,
    },
    Output {
        output: String,
        value: Operand,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Operand {
    Input {
        input: String,
        #[serde(default)]
        index: Option<usize>,
    },
    Lit {
        lit: Json,
    },
    Var {
        var: String,
        #[serde(default)]
        column: Option<String>,
        #[serde(default)]
        all: bool,
    },
    Count {
        count: String,
    },
}

enum Slot {
    Rows(ResultSet),
    Value(Value),
}

fn invalid(reason: impl Into<String>) -> FunctionError {
    FunctionError::Failed(reason.into())
}

fn eval(op: &Operand, ctx: &FunctionContext<'_, '_>, vars: &HashMap<String, Slot>) -> Result<Datum, FunctionError> {
    let var = |name: &str| vars.get(name).ok_or_else(|| invalid(format!("unbound variable {name}")));
    Ok(match op {
        Operand::Input { input, index: None } => ctx.input(input)?.clone(),
        Operand::Input { input, index: Some(i) } => {
            let list = ctx.list(input)?;
            Datum::Value(list.get(*i).cloned().ok_or_else(|| invalid(format!("{input}[{i}] out of range")))?)
        }
        Operand::Lit { lit } => Datum::from_json(lit).ok_or_else(|| invalid("literal must be a scalar or a list of scalars"))?,
        Operand::Var { var: name, column, all } => match (var(name)?, column) {
            (Slot::Value(v), None) => Datum::Value(v.clone()),
            (Slot::Rows(rs), Some(c)) if *all => {
                Datum::List(rs.column(c).ok_or_else(|| invalid(format!("no column {c} in {name}")))?)
            }
            (Slot::Rows(rs), Some(c)) => {
                if !rs.columns.iter().any(|x| x == c) {
                    return Err(invalid(format!("no column {c} in {name}")));
                }
                Datum::Value(rs.first(c).cloned().unwrap_or(Value::Null))
            }
            _ => return Err(invalid(format!("variable {name} used with the wrong shape"))),
        },
        Operand::Count { count } => match var(count)? {
            Slot::Rows(rs) => Datum::Value(Value::Int64(if rs.rows.is_empty() { rs.affected } else { rs.rows.len() } as i64)),
            Slot::Value(_) => return Err(invalid(format!("variable {count} is not a result set"))),
        },
    })
}

fn scalar(d: Datum) -> Result<Value, FunctionError> {
    match d {
        Datum::Value(v) => Ok(v),
        Datum::List(_) => Err(invalid("statement parameters and payloads must be scalars")),
    }
}

/// Runs a program as a function body.
pub fn run_program(program: &[Step], ctx: &mut FunctionContext<'_, '_>, outputs: &[String]) -> Result<(), FunctionError> {
    let mut vars: HashMap<String, Slot> = HashMap::new();
    let mut returned = Vec::new();
    for step in program {
        match step {
            Step::Exec { exec, params, bind } => {
                let params = params.iter().map(|p| eval(p, ctx, &vars).and_then(scalar)).collect::<Result<Vec<_>, _>>()?;
                let rs = ctx.exec(exec, &params)?;
                if let Some(b) = bind {
                    vars.insert(b.clone(), Slot::Rows(rs));
                }
            }
            Step::Call { call, payload, bind } => {
                let payload = scalar(eval(payload, ctx, &vars)?)?;
                let v = ctx.external_call(call, payload)?;
                if let Some(b) = bind {
                    vars.insert(b.clone(), Slot::Value(v));
                }
            }
            Step::Output { output, value } => {
                let v = eval(value, ctx, &vars)?;
                ctx.output(output, v)?;
                returned.push(output.clone());
            }
        }
    }
    for o in outputs {
        if !returned.contains(o) {
            ctx.output(o, Value::Null)?;
        }
    }
    Ok(())
}

impl FunctionDoc {
    pub fn to_function(&self) -> FunctionDef {
        let mut f = FunctionDef::new(&self.name);
        f.statements = self.statements.clone();
        f.inputs = self.inputs.clone();
        f.outputs = self.outputs.clone();
        f.site_hint = self.site_hint.clone();
        f.handles_failures = self.handles_failures;
        let program = Arc::new(self.program.clone().unwrap_or_default());
        let outputs = self.outputs.clone();
        f.body(move |ctx| run_program(&program, ctx, &outputs))
    }

    pub fn from_function(f: &FunctionDef) -> Self {
        FunctionDoc {
            name: f.name.clone(),
            inputs: f.inputs.clone(),
            outputs: f.outputs.clone(),
            statements: f.statements.clone(),
            site_hint: f.site_hint.clone(),
            handles_failures: f.handles_failures,
            program: None,
        }
    }
}

impl WorkflowDoc {
    pub fn parse(text: &str) -> Result<Self, WorkflowError> {
        serde_json::from_str(text).map_err(|e| WorkflowError::InvalidDocument(e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serializes")
    }

    /// Validates the document into a workflow graph, applying its groups.
    pub fn build(&self) -> Result<WorkflowGraph, WorkflowError> {
        let functions = self.functions.iter().map(FunctionDoc::to_function).collect();
        let mut graph = create_workflow(&self.name, functions, self.wiring.clone())?;
        for g in &self.groups {
            graph = graph.group_functions(g)?;
        }
        Ok(graph)
    }

    /// Creates the document's tables, leaving identical existing ones alone.
    pub fn create_tables(&self, engine: &Engine) -> Result<(), EngineError> {
        for t in &self.tables {
            match engine.table_meta(&t.name) {
                Some(meta) if meta.schema == *t => {}
                Some(_) => return Err(EngineError::DuplicateTable(t.name.clone())),
                None => engine.create_table(t.clone())?,
            }
        }
        Ok(())
    }

    /// Describes a graph, including its derived topology. Function programs
    /// are not recoverable from compiled bodies and are left out.
    pub fn export(graph: &WorkflowGraph) -> Self {
        let name_of = |node: usize| graph.nodes[node].name.as_str();
        let mut edges = Vec::new();
        for (node, f) in graph.nodes.iter().enumerate() {
            for (input, source) in f.inputs.iter().zip(&graph.bindings[node]) {
                let from = match source {
                    Source::Workflow(w) => w.clone(),
                    Source::Output { node: p, output } => format!("{}.{}", name_of(*p), output),
                };
                edges.push(EdgeDoc { from, to: format!("{}.{}", f.name, input) });
            }
        }
        let sink = &graph.nodes[graph.sink()].name;
        for (name, output) in &graph.outputs {
            edges.push(EdgeDoc { from: format!("{sink}.{output}"), to: name.clone() });
        }
        let units = match super::register(graph, super::RecordingPolicy::Selective) {
            Ok(r) => r.units().iter().map(|u| u.members.iter().map(|&m| name_of(m).to_owned()).collect()).collect(),
            Err(_) => Vec::new(),
        };
        WorkflowDoc {
            name: graph.name.clone(),
            tables: Vec::new(),
            functions: graph.nodes.iter().map(|f| FunctionDoc::from_function(f)).collect(),
            wiring: graph.wiring.clone(),
            groups: graph.groups.iter().map(|g| g.iter().map(|&m| name_of(m).to_owned()).collect()).collect(),
            order: graph.nodes.iter().map(|f| f.name.clone()).collect(),
            edges,
            units,
        }
    }
}

/// Convenience: parse inputs given as a JSON object.
pub fn inputs_from_json(json: &Json) -> Result<BTreeMap<String, Datum>, WorkflowError> {
    let obj = json.as_object().ok_or_else(|| WorkflowError::InvalidDocument("inputs must be an object".into()))?;
    obj.iter()
        .map(|(k, v)| {
            Datum::from_json(v)
                .map(|d| (k.clone(), d))
                .ok_or_else(|| WorkflowError::InvalidDocument(format!("input {k} must be a scalar or a list of scalars")))
        })
        .collect()
}

/// Renders named data as a JSON object.
pub fn outputs_to_json(outputs: &BTreeMap<String, Datum>) -> Json {
    Json::Object(outputs.iter().map(|(k, v)| (k.clone(), v.to_json())).collect())
}
