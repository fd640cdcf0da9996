//! Workflow execution. Each unit runs as one transaction; recorded units look
//! up their persisted output first and store it on commit, so resubmitting a
//! crashed invocation under the same ID resumes it without repeating effects.

mod system;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

pub use system::{DecodeError, RECORDS, RESULTS, SEQUENCES};
use system::{decode_outcome, encode_outcome, Statements};

use crate::engine::{Engine, EngineError, Transaction, TxnMode};
use crate::trace::{FunctionInvocationEvent, Tracer};
use crate::value::{Datum, Value};
use crate::workflow::{
    register, ExternalPorts, Failure, FunctionContext, FunctionError, Input, RecordingPolicy, RegisteredWorkflow, Source,
    WorkflowError, WorkflowGraph,
};

/// Client-assigned invocation identity: `client_id` comes from
/// [`Dispatcher::client_connect`], `counter` increases per request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InvocationId {
    pub client_id: u64,
    pub counter: u64,
}

impl InvocationId {
    pub fn new(client_id: u64, counter: u64) -> Self {
        InvocationId { client_id, counter }
    }

    pub fn workflow_id(&self) -> String {
        self.to_string()
    }

    /// ID of the unit at 1-based topological position `unit`.
    pub fn func_id(&self, unit: usize) -> String {
        format!("{}:{}:{}", self.client_id, self.counter, unit)
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (c, n) = s.split_once(':')?;
        Some(InvocationId { client_id: c.parse().ok()?, counter: n.parse().ok()? })
    }
}

impl fmt::Display for InvocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.client_id, self.counter)
    }
}

/// Result of a unit or a whole workflow. Unit outputs are keyed
/// `function.output`; workflow outputs by their workflow-level name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Success(BTreeMap<String, Datum>),
    Failure(Failure),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HookPoint {
    BeforeUnit { unit: usize, attempt: u32 },
    /// The unit body finished; its transaction is still open.
    AfterBody { unit: usize, attempt: u32 },
    AfterCommit { unit: usize },
    /// The workflow completed and its result is stored.
    BeforeResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookAction {
    Continue,
    /// Abandon the invocation as if the worker died.
    Crash,
    /// Abort the current attempt and retry the unit.
    Transient,
}

/// Fault injection points. Production code uses [`NoFaults`], which
/// compiles away.
pub trait FaultHooks: Sync {
    fn at(&self, workflow_id: &str, point: HookPoint) -> HookAction;
}

pub struct NoFaults;

impl FaultHooks for NoFaults {
    #[inline(always)]
    fn at(&self, _: &str, _: HookPoint) -> HookAction {
        HookAction::Continue
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DispatcherConfig {
    /// Retries of a unit after retryable failures before it fails for good.
    pub max_retries: u32,
    /// Threads used to run independent units of one invocation; 1 runs units
    /// strictly in topological order.
    pub unit_workers: usize,
    /// Logical clock ticks a workflow result is kept for resubmissions.
    pub result_ttl: u64,
}

impl Default for DispatcherConfig {
    fn default() -> Self {
        DispatcherConfig { max_retries: 64, unit_workers: 1, result_ttl: 1 << 40 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DispatchError {
    #[error("unknown workflow {0}")]
    UnknownWorkflow(String),
    #[error("inputs do not match the workflow: missing {missing:?}, unexpected {unexpected:?}")]
    InputMismatch { missing: Vec<String>, unexpected: Vec<String> },
    #[error("invocation crashed before responding")]
    Crashed,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error("corrupt stored outcome for {id}: {source}")]
    CorruptRecord { id: String, source: DecodeError },
}

#[derive(Debug, Default)]
pub struct DispatchStats {
    invocations: AtomicU64,
    completed: AtomicU64,
    replayed: AtomicU64,
    units_executed: AtomicU64,
    recorded_executed: AtomicU64,
    short_circuits: AtomicU64,
    skipped: AtomicU64,
    retries: AtomicU64,
    unit_failures: AtomicU64,
    crashes: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub invocations: u64,
    pub completed: u64,
    /// Resubmissions answered from the stored result.
    pub replayed: u64,
    /// Unit transactions committed.
    pub units_executed: u64,
    /// Of which stored a recorded output.
    pub recorded_executed: u64,
    /// Recorded units answered from their stored output.
    pub short_circuits: u64,
    /// Units not run because an input carried a failure.
    pub skipped: u64,
    pub retries: u64,
    pub unit_failures: u64,
    pub crashes: u64,
}

impl StatsSnapshot {
    /// Share of executed unit transactions that recorded their output.
    pub fn recorded_fraction(&self) -> f64 {
        if self.units_executed == 0 {
            0.0
        } else {
            self.recorded_executed as f64 / self.units_executed as f64
        }
    }
}

impl DispatchStats {
    pub fn snapshot(&self) -> StatsSnapshot {
        let g = |a: &AtomicU64| a.load(Ordering::Relaxed);
        StatsSnapshot {
            invocations: g(&self.invocations),
            completed: g(&self.completed),
            replayed: g(&self.replayed),
            units_executed: g(&self.units_executed),
            recorded_executed: g(&self.recorded_executed),
            short_circuits: g(&self.short_circuits),
            skipped: g(&self.skipped),
            retries: g(&self.retries),
            unit_failures: g(&self.unit_failures),
            crashes: g(&self.crashes),
        }
    }
}

fn bump(a: &AtomicU64) {
    a.fetch_add(1, Ordering::Relaxed);
}

type RecordKey = (i64, String);

/// Per-invocation state shared by the unit executions.
struct Run<'r, H> {
    wf: &'r RegisteredWorkflow,
    inputs: &'r BTreeMap<String, Datum>,
    id: InvocationId,
    workflow_id: &'r str,
    hooks: &'r H,
    tracer: Option<&'r Tracer>,
}

pub struct Dispatcher {
    engine: Engine,
    workflows: RwLock<HashMap<String, Arc<RegisteredWorkflow>>>,
    ports: ExternalPorts,
    config: DispatcherConfig,
    stats: DispatchStats,
    sys: Statements,
}

impl Dispatcher {
    pub fn new(engine: Engine, config: DispatcherConfig) -> Result<Self, EngineError> {
        system::ensure_tables(&engine)?;
        Ok(Dispatcher {
            engine,
            workflows: RwLock::new(HashMap::new()),
            ports: ExternalPorts::new(),
            config,
            stats: DispatchStats::default(),
            sys: Statements::new(),
        })
    }

    /// A dispatcher over another engine with the same workflows and ports.
    pub fn fork(&self, engine: Engine) -> Result<Dispatcher, EngineError> {
        let d = Dispatcher::new(engine, self.config)?;
        *d.workflows.write() = self.workflows.read().clone();
        Ok(Dispatcher { ports: self.ports.clone(), ..d })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn ports(&self) -> &ExternalPorts {
        &self.ports
    }

    pub fn config(&self) -> DispatcherConfig {
        self.config
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.stats.snapshot()
    }

    /// Compiles and installs a workflow, replacing any of the same name.
    pub fn register(&self, graph: &WorkflowGraph, policy: RecordingPolicy) -> Result<Arc<RegisteredWorkflow>, DispatchError> {
        let wf = register(graph, policy)?;
        self.install(wf.clone())?;
        Ok(wf)
    }

    pub fn install(&self, wf: Arc<RegisteredWorkflow>) -> Result<(), DispatchError> {
        for f in wf.graph().nodes() {
            for stmt in &f.statements {
                self.engine.validate(stmt).map_err(|e| WorkflowError::InvalidStatement {
                    function: f.name.clone(),
                    reason: format!("{}: {e}", stmt.id),
                })?;
            }
        }
        self.workflows.write().insert(wf.name().to_owned(), wf);
        Ok(())
    }

    pub fn workflow(&self, name: &str) -> Option<Arc<RegisteredWorkflow>> {
        self.workflows.read().get(name).cloned()
    }

    pub fn workflow_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.workflows.read().keys().cloned().collect();
        names.sort();
        names
    }

    /// Allocates a fresh client ID from the sequence table.
    pub fn client_connect(&self) -> Result<u64, EngineError> {
        let name = Value::Text("client_id".into());
        let mode = TxnMode::SinglePartition(self.engine.partition_for(&name));
        self.engine.run(mode, |txn| {
            let next = match txn.exec(&self.sys.seq_get, &[name.clone()])?.first("next") {
                Some(v) => v.as_i64().unwrap_or(1),
                None => {
                    txn.exec(&self.sys.seq_put, &[name.clone(), Value::Int64(1)])?;
                    1
                }
            };
            txn.exec(&self.sys.seq_set, &[Value::Int64(next + 1), name.clone()])?;
            Ok(next as u64)
        })
    }

    pub fn invoke(
        &self,
        workflow: &str,
        id: InvocationId,
        inputs: &BTreeMap<String, Datum>,
    ) -> Result<Outcome, DispatchError> {
        self.invoke_with(workflow, id, inputs, &NoFaults)
    }

    /// Runs (or resumes) the invocation `id`. Returns [`DispatchError::Crashed`]
    /// when a hook crashes it; resubmitting the same ID continues from the
    /// recorded state.
    pub fn invoke_with<H: FaultHooks>(
        &self,
        workflow: &str,
        id: InvocationId,
        inputs: &BTreeMap<String, Datum>,
        hooks: &H,
    ) -> Result<Outcome, DispatchError> {
        let wf = self.workflow(workflow).ok_or_else(|| DispatchError::UnknownWorkflow(workflow.to_owned()))?;
        let expected = wf.graph().inputs();
        let missing: Vec<String> = expected.iter().filter(|k| !inputs.contains_key(*k)).cloned().collect();
        let unexpected: Vec<String> = inputs.keys().filter(|k| !expected.contains(k)).cloned().collect();
        if !missing.is_empty() || !unexpected.is_empty() {
            return Err(DispatchError::InputMismatch { missing, unexpected });
        }
        bump(&self.stats.invocations);
        let workflow_id = id.workflow_id();
        let outcome = match self.lookup_result(&workflow_id)? {
            Some(o) => {
                bump(&self.stats.replayed);
                o
            }
            None => {
                let tracer = self.engine.tracer();
                let run = Run { wf: &wf, inputs, id, workflow_id: &workflow_id, hooks, tracer: tracer.as_deref() };
                let (units, records) = self.execute(&run)?;
                let sink = units.last().expect("workflows are non-empty");
                let outcome = self.workflow_outcome(&wf, sink);
                let stored = self.complete(&workflow_id, &outcome, &records)?;
                bump(&self.stats.completed);
                stored
            }
        };
        if hooks.at(&workflow_id, HookPoint::BeforeResponse) == HookAction::Crash {
            bump(&self.stats.crashes);
            return Err(DispatchError::Crashed);
        }
        Ok(outcome)
    }

    /// Stored result of a completed workflow.
    pub fn lookup_result(&self, workflow_id: &str) -> Result<Option<Outcome>, DispatchError> {
        let key = Value::Text(workflow_id.to_owned());
        let mode = TxnMode::SinglePartition(self.engine.partition_for(&key));
        let text = self.engine.run(mode, |txn| {
            Ok(txn.exec(&self.sys.result_get, &[key.clone()])?.first("outcome").and_then(|v| v.as_str().map(str::to_owned)))
        })?;
        text.map(|t| decode_outcome(&t).map_err(|source| DispatchError::CorruptRecord { id: workflow_id.to_owned(), source }))
            .transpose()
    }

    /// Deletes results, and the recorded outputs listed with them, whose age
    /// exceeds the configured TTL. Returns the number of results removed.
    pub fn purge_expired(&self) -> Result<usize, EngineError> {
        let cutoff = self.engine.now().saturating_sub(self.config.result_ttl);
        self.engine.run(TxnMode::MultiPartition, |txn| {
            let rs = txn.exec(&self.sys.result_scan, &[])?;
            let mut removed = 0;
            for row in &rs.rows {
                let completed = row.values[1].as_i64().unwrap_or(0);
                if completed as u64 >= cutoff {
                    continue;
                }
                txn.exec(&self.sys.result_del, &[row.values[0].clone()])?;
                for (site, func_id) in row.values[2].as_str().map(parse_records).unwrap_or_default() {
                    txn.exec(&self.sys.record_del, &[Value::Int64(site), Value::Text(func_id)])?;
                }
                removed += 1;
            }
            Ok(removed)
        })
    }

    fn execute<H: FaultHooks>(&self, run: &Run<'_, H>) -> Result<(Vec<Outcome>, Vec<RecordKey>), DispatchError> {
        let n = run.wf.units().len();
        let mut outcomes: Vec<Option<Outcome>> = vec![None; n];
        let mut records = Vec::new();
        if self.config.unit_workers <= 1 {
            for u in 0..n {
                let (o, r) = self.run_unit(run, u, &outcomes)?;
                outcomes[u] = Some(o);
                records.extend(r);
            }
        } else {
            let units = run.wf.units();
            while outcomes.iter().any(Option::is_none) {
                let ready: Vec<usize> = (0..n)
                    .filter(|&u| outcomes[u].is_none() && units[u].parents.iter().all(|&p| outcomes[p].is_some()))
                    .collect();
                let results = self.run_frontier(run, &ready, &outcomes);
                for (&u, r) in ready.iter().zip(results) {
                    let (o, rec) = r?;
                    outcomes[u] = Some(o);
                    records.extend(rec);
                }
            }
        }
        Ok((outcomes.into_iter().map(|o| o.expect("every unit ran")).collect(), records))
    }

    #[allow(clippy::type_complexity)]
    fn run_frontier<H: FaultHooks>(
        &self,
        run: &Run<'_, H>,
        ready: &[usize],
        outcomes: &[Option<Outcome>],
    ) -> Vec<Result<(Outcome, Option<RecordKey>), DispatchError>> {
        if ready.len() == 1 {
            return vec![self.run_unit(run, ready[0], outcomes)];
        }
        let per = ready.len().div_ceil(self.config.unit_workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = ready
                .chunks(per)
                .map(|chunk| s.spawn(move || chunk.iter().map(|&u| self.run_unit(run, u, outcomes)).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("unit worker panicked")).collect()
        })
    }

    fn source_input<H>(&self, run: &Run<'_, H>, source: &Source, outcomes: &[Option<Outcome>]) -> Input {
        match source {
            Source::Workflow(name) => Input::Value(run.inputs[name].clone()),
            Source::Output { node, output } => {
                match outcomes[run.wf.unit_of(*node)].as_ref().expect("parents run first") {
                    Outcome::Success(map) => Input::Value(
                        map.get(&output_key(run.wf.graph(), *node, output)).cloned().unwrap_or(Datum::Value(Value::Null)),
                    ),
                    Outcome::Failure(f) => Input::Failure(f.clone()),
                }
            }
        }
    }

    fn run_unit<H: FaultHooks>(
        &self,
        run: &Run<'_, H>,
        u: usize,
        outcomes: &[Option<Outcome>],
    ) -> Result<(Outcome, Option<RecordKey>), DispatchError> {
        let unit = &run.wf.units()[u];
        let graph = run.wf.graph();
        let mut inputs: BTreeMap<usize, BTreeMap<String, Input>> =
            unit.members.iter().map(|&m| (m, BTreeMap::new())).collect();
        for ui in &unit.external_inputs {
            let input = self.source_input(run, &ui.source, outcomes);
            if let Input::Failure(f) = &input {
                if !graph.nodes()[ui.member].handles_failures {
                    bump(&self.stats.skipped);
                    return Ok((Outcome::Failure(f.clone()), None));
                }
            }
            inputs.get_mut(&ui.member).expect("member").insert(ui.input.clone(), input);
        }

        let func_id = run.id.func_id(unit.index);
        let mode = if unit.statements == 0 {
            // only the record is touched; any single partition will do
            TxnMode::SinglePartition(self.engine.partition_for(&Value::Text(func_id.clone())))
        } else {
            match unit.site.as_ref().map(|s| self.source_input(run, s, outcomes)) {
                Some(Input::Value(d)) => match d.routing_value() {
                    Some(v) => TxnMode::SinglePartition(self.engine.partition_for(v)),
                    None => TxnMode::MultiPartition,
                },
                _ => TxnMode::MultiPartition,
            }
        };
        let site = match mode {
            TxnMode::SinglePartition(p) => p as i64,
            TxnMode::MultiPartition => 0,
        };
        let record_key = unit.recorded.then(|| (site, func_id.clone()));
        let needs_txn = unit.statements > 0 || unit.recorded;
        let fail = |class: &str, message: String| Failure { unit: unit.name.clone(), error_class: class.into(), message };

        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let retry_left = attempt <= self.config.max_retries;
            match run.hooks.at(run.workflow_id, HookPoint::BeforeUnit { unit: unit.index, attempt }) {
                HookAction::Crash => return Err(self.crashed()),
                HookAction::Transient if retry_left => {
                    bump(&self.stats.retries);
                    continue;
                }
                HookAction::Transient => {
                    let f = fail("Transient", "retries exhausted".into());
                    return self.fail_unit(run, mode, record_key, f);
                }
                HookAction::Continue => {}
            }
            if let Some(t) = run.tracer {
                t.capture_invocation(FunctionInvocationEvent {
                    func_id: func_id.clone(),
                    timestamp: self.engine.now(),
                    function_name: unit.name.clone(),
                    workflow_name: run.wf.name().to_owned(),
                    workflow_id: run.workflow_id.to_owned(),
                });
            }
            let mut txn = if needs_txn { Some(self.engine.begin(mode)?) } else { None };
            if let Some(txn) = txn.as_mut() {
                txn.set_trace_tag(func_id.as_str());
                if let Some((site, fid)) = &record_key {
                    if let Some(stored) = self.find_record(txn, *site, fid)? {
                        bump(&self.stats.short_circuits);
                        return Ok((stored, record_key));
                    }
                }
            }
            let result = self.run_members(run, u, inputs.clone(), txn.as_mut(), &func_id);
            let outputs = match result {
                Ok(outputs) => outputs,
                Err(e) if e.is_retryable() && retry_left => {
                    drop(txn);
                    bump(&self.stats.retries);
                    continue;
                }
                Err(e) => {
                    drop(txn);
                    let f = match e {
                        FunctionError::UpstreamFailure(f) => f,
                        e => fail(&e.class(), e.to_string()),
                    };
                    return self.fail_unit(run, mode, record_key, f);
                }
            };
            match run.hooks.at(run.workflow_id, HookPoint::AfterBody { unit: unit.index, attempt }) {
                HookAction::Crash => return Err(self.crashed()),
                HookAction::Transient if retry_left => {
                    drop(txn);
                    bump(&self.stats.retries);
                    continue;
                }
                HookAction::Transient => {
                    drop(txn);
                    let f = fail("Transient", "retries exhausted".into());
                    return self.fail_unit(run, mode, record_key, f);
                }
                HookAction::Continue => {}
            }
            let outcome = Outcome::Success(outputs);
            if let Some(mut txn) = txn {
                if let Some((site, fid)) = &record_key {
                    self.put_record(&mut txn, *site, fid, run.workflow_id, &outcome)?;
                }
                if let Err(e) = txn.commit() {
                    // the body swallowed an error that aborted the transaction
                    let f = fail("Aborted", e.to_string());
                    return self.fail_unit(run, mode, record_key, f);
                }
            }
            bump(&self.stats.units_executed);
            if unit.recorded {
                bump(&self.stats.recorded_executed);
            }
            if run.hooks.at(run.workflow_id, HookPoint::AfterCommit { unit: unit.index }) == HookAction::Crash {
                return Err(self.crashed());
            }
            return Ok((outcome, record_key));
        }
    }

    fn crashed(&self) -> DispatchError {
        bump(&self.stats.crashes);
        DispatchError::Crashed
    }

    fn run_members<H>(
        &self,
        run: &Run<'_, H>,
        u: usize,
        mut inputs: BTreeMap<usize, BTreeMap<String, Input>>,
        mut txn: Option<&mut Transaction<'_>>,
        func_id: &str,
    ) -> Result<BTreeMap<String, Datum>, FunctionError> {
        let graph = run.wf.graph();
        let mut produced = BTreeMap::new();
        for &m in &run.wf.units()[u].members {
            let def = &graph.nodes()[m];
            let mut mine = inputs.remove(&m).unwrap_or_default();
            for (input, source) in def.inputs.iter().zip(graph.bindings(m)) {
                if let Source::Output { node, output } = source {
                    if run.wf.unit_of(*node) == u {
                        let v = produced.get(&output_key(graph, *node, output)).cloned();
                        mine.insert(input.clone(), Input::Value(v.unwrap_or(Datum::Value(Value::Null))));
                    }
                }
            }
            let mut ctx = FunctionContext::new(def, txn.as_deref_mut(), mine, &self.ports, func_id, run.workflow_id);
            (def.body)(&mut ctx)?;
            for (k, v) in ctx.into_outputs()? {
                produced.insert(format!("{}.{}", def.name, k), v);
            }
        }
        Ok(produced)
    }

    fn find_record(&self, txn: &mut Transaction<'_>, site: i64, func_id: &str) -> Result<Option<Outcome>, DispatchError> {
        let rs = txn.exec(&self.sys.record_get, &[Value::Int64(site), Value::Text(func_id.to_owned())])?;
        match rs.first("output").and_then(Value::as_str) {
            Some(text) => decode_outcome(text)
                .map(Some)
                .map_err(|source| DispatchError::CorruptRecord { id: func_id.to_owned(), source }),
            None => Ok(None),
        }
    }

    fn put_record(
        &self,
        txn: &mut Transaction<'_>,
        site: i64,
        func_id: &str,
        workflow_id: &str,
        outcome: &Outcome,
    ) -> Result<(), EngineError> {
        let row = [
            Value::Int64(site),
            Value::Text(func_id.to_owned()),
            Value::Text(workflow_id.to_owned()),
            Value::Text(encode_outcome(outcome)),
        ];
        txn.exec(&self.sys.record_put, &row).map(|_| ())
    }

    /// Settles a unit as failed. A recorded unit stores the failure in a fresh
    /// transaction so a resumed run forwards the same failure downstream.
    fn fail_unit<H>(
        &self,
        run: &Run<'_, H>,
        mode: TxnMode,
        record_key: Option<RecordKey>,
        failure: Failure,
    ) -> Result<(Outcome, Option<RecordKey>), DispatchError> {
        bump(&self.stats.unit_failures);
        let mut outcome = Outcome::Failure(failure);
        if let Some((site, fid)) = &record_key {
            let mut txn = self.engine.begin(mode)?;
            match self.find_record(&mut txn, *site, fid)? {
                Some(stored) => outcome = stored,
                None => {
                    self.put_record(&mut txn, *site, fid, run.workflow_id, &outcome)?;
                    txn.commit()?;
                }
            }
        }
        Ok((outcome, record_key))
    }

    fn workflow_outcome(&self, wf: &RegisteredWorkflow, sink: &Outcome) -> Outcome {
        match sink {
            Outcome::Failure(f) => Outcome::Failure(f.clone()),
            Outcome::Success(map) => {
                let graph = wf.graph();
                let outputs = graph
                    .outputs()
                    .into_iter()
                    .map(|(name, out)| {
                        let v = map.get(&output_key(graph, graph.sink(), &out)).cloned();
                        (name, v.unwrap_or(Datum::Value(Value::Null)))
                    })
                    .collect();
                Outcome::Success(outputs)
            }
        }
    }

    /// Stores the workflow result. If a concurrent run of the same
    /// invocation finished first, its result wins and is returned.
    fn complete(&self, workflow_id: &str, outcome: &Outcome, records: &[RecordKey]) -> Result<Outcome, DispatchError> {
        let key = Value::Text(workflow_id.to_owned());
        let mode = TxnMode::SinglePartition(self.engine.partition_for(&key));
        let listed: Vec<String> = records.iter().map(|(s, f)| format!("{s}:{f}")).collect();
        let row = [
            key.clone(),
            Value::Text(encode_outcome(outcome)),
            Value::Int64(self.engine.now() as i64),
            Value::Text(listed.join(";")),
        ];
        let mut txn = self.engine.begin(mode)?;
        match txn.exec(&self.sys.result_put, &row) {
            Ok(_) => {
                txn.commit()?;
                Ok(outcome.clone())
            }
            Err(EngineError::ConstraintViolation { .. }) => {
                drop(txn);
                Ok(self.lookup_result(workflow_id)?.unwrap_or_else(|| outcome.clone()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

fn output_key(graph: &WorkflowGraph, node: usize, output: &str) -> String {
    format!("{}.{}", graph.nodes()[node].name, output)
}

fn parse_records(text: &str) -> Vec<RecordKey> {
    text.split(';')
        .filter_map(|r| {
            let (site, fid) = r.split_once(':')?;
            Some((site.parse().ok()?, fid.to_owned()))
        })
        .collect()
}
