use std::collections::BTreeMap;

use super::{ExternalPorts, Failure, FunctionDef, FunctionError};
use crate::engine::{ResultSet, Transaction};
use crate::value::{Datum, Value};

/// A bound function input: a value or an upstream failure notification.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Input {
    Value(Datum),
    Failure(Failure),
}

/// What a function body sees while it runs: its inputs, the enclosing
/// transaction restricted to the declared statements, external ports, and
/// a place to return outputs. Exposes no clock or randomness, since bodies
/// must be deterministic in their inputs and the data they read.
pub struct FunctionContext<'a, 'e> {
    function: &'a FunctionDef,
    txn: Option<&'a mut Transaction<'e>>,
    inputs: BTreeMap<String, Input>,
    outputs: BTreeMap<String, Datum>,
    ports: &'a ExternalPorts,
    func_id: &'a str,
    workflow_id: &'a str,
}

impl<'a, 'e> FunctionContext<'a, 'e> {
    pub fn new(
        function: &'a FunctionDef,
        txn: Option<&'a mut Transaction<'e>>,
        inputs: BTreeMap<String, Input>,
        ports: &'a ExternalPorts,
        func_id: &'a str,
        workflow_id: &'a str,
    ) -> Self {
        FunctionContext { function, txn, inputs, outputs: BTreeMap::new(), ports, func_id, workflow_id }
    }

    pub fn function_name(&self) -> &str {
        &self.function.name
    }

    /// Invocation ID of the unit this function runs in.
    pub fn func_id(&self) -> &str {
        self.func_id
    }

    pub fn workflow_id(&self) -> &str {
        self.workflow_id
    }

    /// Retrieves a named input. Fails if the input carries an upstream
    /// failure; use [`Self::failure`] to inspect those.
    pub fn input(&self, name: &str) -> Result<&Datum, FunctionError> {
        match self.inputs.get(name) {
            Some(Input::Value(d)) => Ok(d),
            Some(Input::Failure(f)) => Err(FunctionError::UpstreamFailure(f.clone())),
            None => Err(FunctionError::UnknownInput(name.to_owned())),
        }
    }

    /// A scalar input; lists are rejected.
    pub fn value(&self, name: &str) -> Result<&Value, FunctionError> {
        self.input(name)?.as_value().ok_or_else(|| FunctionError::InvalidInput {
            input: name.to_owned(),
            reason: "expected a scalar, got a list".into(),
        })
    }

    pub fn i64(&self, name: &str) -> Result<i64, FunctionError> {
        self.value(name)?.as_i64().ok_or_else(|| FunctionError::InvalidInput {
            input: name.to_owned(),
            reason: "expected an integer".into(),
        })
    }

    /// A list input; a scalar is treated as a one-element list.
    pub fn list(&self, name: &str) -> Result<Vec<Value>, FunctionError> {
        Ok(match self.input(name)? {
            Datum::List(l) => l.clone(),
            Datum::Value(v) => vec![v.clone()],
        })
    }

    pub fn failure(&self, name: &str) -> Option<&Failure> {
        match self.inputs.get(name) {
            Some(Input::Failure(f)) => Some(f),
            _ => None,
        }
    }

    /// Runs one of the function's declared statements inside the unit's
    /// transaction. Any other statement aborts the transaction.
    pub fn exec(&mut self, statement: &str, params: &[Value]) -> Result<ResultSet, FunctionError> {
        let undeclared = || FunctionError::UndeclaredStatement {
            function: self.function.name.clone(),
            statement: statement.to_owned(),
        };
        let stmt = self.function.find_statement(statement).ok_or_else(undeclared)?;
        let txn = self.txn.as_deref_mut().ok_or_else(undeclared)?;
        Ok(txn.exec(stmt, params)?)
    }

    /// Calls an external port, passing this invocation's ID so the handler
    /// can deduplicate repeated deliveries.
    pub fn external_call(&mut self, port: &str, payload: Value) -> Result<Value, FunctionError> {
        let handler = self.ports.get(port).ok_or_else(|| FunctionError::UnknownPort(port.to_owned()))?;
        handler(self.func_id, &payload).map_err(|message| FunctionError::External { port: port.to_owned(), message })
    }

    pub fn output(&mut self, name: &str, value: impl Into<Datum>) -> Result<(), FunctionError> {
        if !self.function.outputs.iter().any(|o| o == name) {
            return Err(FunctionError::UnknownOutput(name.to_owned()));
        }
        self.outputs.insert(name.to_owned(), value.into());
        Ok(())
    }

    /// Ends the body, checking that every declared output was returned.
    pub fn into_outputs(self) -> Result<BTreeMap<String, Datum>, FunctionError> {
        for o in &self.function.outputs {
            if !self.outputs.contains_key(o) {
                return Err(FunctionError::MissingOutput(o.clone()));
            }
        }
        Ok(self.outputs)
    }
}
