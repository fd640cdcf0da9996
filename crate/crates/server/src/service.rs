//! Operations of the service, independent of transport. Every method blocks;
//! async front ends run them on the blocking pool.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use serde_json::Value as Json;

use hivemind_core::api::{
    ApiError, BenchRequest, BenchResponse, CheckRequest, CheckResponse, ConnectResponse, DownstreamQuery, DownstreamResponse,
    InvokeRequest, InvokeResponse, RecordRef, RegisterRequest, RegisterResponse, SfrRequest, SfrResponse, StateQuery,
    StateResponse, TraceSummary,
};
use hivemind_core::bench::{self, BenchError};
use hivemind_core::config::RuntimeConfig;
use hivemind_core::dispatcher::{DispatchError, Dispatcher, InvocationId};
use hivemind_core::harness::{self, graphs, HarnessError, ModelVerdict, ScheduleSpace};
use hivemind_core::trace::export::{Exporter, JsonlSink};
use hivemind_core::trace::query::{EventStore, QueryError, RecordState};
use hivemind_core::trace::Tracer;
use hivemind_core::workflow::doc::inputs_from_json;
use hivemind_core::workflow::{RecordingPolicy, RegisteredWorkflow, WorkflowError};
use hivemind_core::{Engine, EngineError};

/// Largest workflow, in units, that `check` also model-checks exhaustively.
const MODEL_CHECK_UNITS: usize = 6;
const KEEP_COUNTEREXAMPLES: usize = 5;

pub type ApiResult<T> = Result<T, ApiError>;

struct Tracing {
    tracer: Arc<Tracer>,
    exporter: Exporter,
    dir: PathBuf,
}

pub struct Service {
    config: RuntimeConfig,
    dispatcher: Dispatcher,
    tracing: Option<Tracing>,
    /// Workflows built in at startup; documents may not replace them.
    builtin: BTreeSet<String>,
    /// One lock per workflow ID being executed, so a resubmission that
    /// arrives while the first attempt still runs waits for its result.
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Service {
    /// Starts a runtime with the given bench workloads preloaded.
    pub fn new(config: RuntimeConfig, preload: &[String]) -> ApiResult<Self> {
        let engine = Engine::new(config.engine);
        let tracing = match &config.trace_dir {
            Some(dir) => {
                let tracer = Arc::new(Tracer::new(config.tracer.clone()).map_err(|e| ApiError::new("io", e))?);
                let sink = JsonlSink::new(dir).map_err(|e| ApiError::new("io", e))?;
                engine.set_tracer(Some(tracer.clone()));
                let exporter = Exporter::spawn(tracer.clone(), Box::new(sink), config.exporter.clone());
                Some(Tracing { tracer, exporter, dir: dir.clone() })
            }
            None => None,
        };
        let dispatcher = Dispatcher::new(engine, config.dispatcher).map_err(engine_error)?;
        for name in preload {
            bench::build(name, &dispatcher, RecordingPolicy::Selective).map_err(bench_error)?;
        }
        let mut svc = Service::with_dispatcher(config, dispatcher);
        svc.tracing = tracing;
        Ok(svc)
    }

    /// Serves an existing dispatcher. Several services may share one
    /// engine, standing in for dispatchers on different machines.
    pub fn with_dispatcher(config: RuntimeConfig, dispatcher: Dispatcher) -> Self {
        let builtin = dispatcher.workflow_names().into_iter().collect();
        Service { config, dispatcher, tracing: None, builtin, inflight: Mutex::new(HashMap::new()) }
    }

    pub fn dispatcher(&self) -> &Dispatcher {
        &self.dispatcher
    }

    pub fn connect(&self) -> ApiResult<ConnectResponse> {
        let client_id = self.dispatcher.client_connect().map_err(engine_error)?;
        Ok(ConnectResponse { client_id })
    }

    pub fn invoke(&self, req: &InvokeRequest) -> ApiResult<InvokeResponse> {
        let id = InvocationId::parse(&req.workflow_id)
            .ok_or_else(|| ApiError::new("bad_request", format!("workflow_id {:?} is not client:counter", req.workflow_id)))?;
        let inputs = inputs_from_json(&req.inputs).map_err(workflow_error)?;
        let slot = self.inflight.lock().entry(req.workflow_id.clone()).or_default().clone();
        let result = {
            let _running = slot.lock();
            self.dispatcher.invoke(&req.workflow, id, &inputs)
        };
        {
            let mut map = self.inflight.lock();
            if Arc::strong_count(&slot) == 2 {
                map.remove(&req.workflow_id);
            }
        }
        let outcome = result.map_err(dispatch_error)?;
        Ok(InvokeResponse { workflow_id: req.workflow_id.clone(), outcome: outcome.to_json() })
    }

    pub fn register(&self, req: &RegisterRequest) -> ApiResult<RegisterResponse> {
        if self.builtin.contains(&req.workflow.name) {
            return Err(ApiError::new("conflict", format!("{} is a built-in workflow", req.workflow.name)));
        }
        let graph = req.workflow.build().map_err(workflow_error)?;
        req.workflow.create_tables(self.dispatcher.engine()).map_err(engine_error)?;
        let wf = self.dispatcher.register(&graph, req.policy).map_err(dispatch_error)?;
        Ok(describe(&wf))
    }

    pub fn workflows(&self) -> Vec<RegisterResponse> {
        self.dispatcher.workflow_names().iter().filter_map(|n| self.dispatcher.workflow(n)).map(|w| describe(&w)).collect()
    }

    pub fn sfr(req: &SfrRequest) -> ApiResult<SfrResponse> {
        let graph = req.workflow.build().map_err(workflow_error)?;
        let wf = hivemind_core::workflow::register(&graph, RecordingPolicy::Selective).map_err(workflow_error)?;
        let units = wf.units();
        Ok(SfrResponse {
            workflow: wf.name().to_owned(),
            units: unit_members(&wf),
            recorded: wf.sfr().recorded.iter().map(|&u| units[u].name.clone()).collect(),
            explanation: wf.sfr().explain(wf.analysis()),
        })
    }

    pub fn check(&self, req: &CheckRequest) -> ApiResult<CheckResponse> {
        match req {
            CheckRequest::Graphs { max_units, cap, seed } => {
                let all = graphs::enumerate_capped(*max_units, *cap, *seed);
                let report = harness::sweep(&all, ScheduleSpace::Reduced, KEEP_COUNTEREXAMPLES).map_err(harness_error)?;
                Ok(CheckResponse {
                    passed: report.counterexamples.is_empty(),
                    graphs: report.graphs,
                    schedules: report.schedules,
                    crashes_injected: 0,
                    counterexamples: report.counterexamples.iter().map(to_json).collect(),
                })
            }
            CheckRequest::Workflow { workflow, inputs, schedules, seed } => {
                let inputs = inputs_from_json(inputs).map_err(workflow_error)?;
                let graph = workflow.build().map_err(workflow_error)?;
                let d = Dispatcher::new(Engine::new(self.config.engine), self.config.dispatcher).map_err(engine_error)?;
                workflow.create_tables(d.engine()).map_err(engine_error)?;
                let wf = d.register(&graph, RecordingPolicy::Selective).map_err(dispatch_error)?;
                let client = d.client_connect().map_err(engine_error)?;
                let campaign = harness::random_campaign(&d, wf.name(), *schedules, *seed, client, |_| inputs.clone())
                    .map_err(harness_error)?;
                let mut response = CheckResponse {
                    passed: campaign.failures.is_empty(),
                    graphs: 1,
                    schedules: campaign.runs,
                    crashes_injected: campaign.crashes_injected,
                    counterexamples: campaign.failures.iter().take(KEEP_COUNTEREXAMPLES).map(to_json).collect(),
                };
                if wf.units().len() <= MODEL_CHECK_UNITS {
                    let space = ScheduleSpace::Full;
                    match harness::model_check(wf.analysis(), &wf.recorded_units(), space).map_err(harness_error)? {
                        ModelVerdict::Pass { schedules } => response.schedules += schedules,
                        ModelVerdict::Counterexample(c) => {
                            response.passed = false;
                            response.counterexamples.push(to_json(&c));
                        }
                    }
                }
                Ok(response)
            }
        }
    }

    /// Runs a workload on a fresh runtime, so service state is untouched.
    pub fn bench(&self, req: &BenchRequest) -> ApiResult<BenchResponse> {
        if req.ops == 0 || req.concurrency == 0 {
            return Err(ApiError::new("bad_request", "ops and concurrency must be positive"));
        }
        let engine = Engine::new(self.config.engine);
        let d = Dispatcher::new(engine, self.config.dispatcher).map_err(engine_error)?;
        let workload = bench::build(&req.workload, &d, req.policy).map_err(bench_error)?;
        if !req.trace {
            let report = bench::run_mix(&d, &workload, req.ops, req.concurrency, req.seed).map_err(bench_error)?;
            return Ok(BenchResponse { report, trace: None });
        }
        let dir = match &req.trace_dir {
            Some(dir) => dir.clone(),
            None => {
                let root = self.config.trace_dir.clone().unwrap_or_else(|| PathBuf::from("hivemind-trace"));
                let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
                root.join(format!("bench-{}-{}-{stamp}", req.workload, req.seed))
            }
        };
        let tracer = Arc::new(Tracer::new(self.config.tracer.clone()).map_err(|e| ApiError::new("io", e))?);
        let sink = JsonlSink::new(&dir).map_err(|e| ApiError::new("io", e))?;
        d.engine().set_tracer(Some(tracer.clone()));
        let exporter = Exporter::spawn(tracer.clone(), Box::new(sink), self.config.exporter.clone());
        let report = bench::run_mix(&d, &workload, req.ops, req.concurrency, req.seed);
        d.engine().set_tracer(None);
        let stats = exporter.stop().map_err(|e| ApiError::new("io", e))?;
        let report = report.map_err(bench_error)?;
        Ok(BenchResponse { report, trace: Some(TraceSummary::new(dir, stats, tracer.dropped())) })
    }

    pub fn query_state(&self, q: &StateQuery) -> ApiResult<StateResponse> {
        let store = self.store(q.dir.as_deref())?;
        match store.query_record_state(&q.table, &q.key, q.ts).map_err(query_error)? {
            RecordState::Present { timestamp, row } => Ok(StateResponse::Present { timestamp, row }),
            RecordState::Deleted { timestamp } => Ok(StateResponse::Deleted { timestamp }),
        }
    }

    pub fn query_downstream(&self, q: &DownstreamQuery) -> ApiResult<DownstreamResponse> {
        let store = self.store(q.dir.as_deref())?;
        let succ: Vec<&str> = q.successors.iter().map(String::as_str).collect();
        let found = store.query_downstream(&q.table, &q.key, &succ).map_err(query_error)?;
        let records = found
            .into_iter()
            .map(|r| RecordRef { key: serde_json::from_str(&r.key).unwrap_or(Json::String(r.key)), table: r.table })
            .collect();
        Ok(DownstreamResponse { records })
    }

    /// Exports everything buffered so far.
    pub fn flush_trace(&self) -> ApiResult<Option<TraceSummary>> {
        match &self.tracing {
            Some(t) => {
                t.exporter.flush().map_err(|e| ApiError::new("io", e))?;
                Ok(Some(TraceSummary::new(t.dir.clone(), t.exporter.stats(), t.tracer.dropped())))
            }
            None => Ok(None),
        }
    }

    fn store(&self, dir: Option<&Path>) -> ApiResult<EventStore> {
        let dir = match (dir, &self.tracing) {
            (Some(d), _) => d.to_owned(),
            (None, Some(t)) => {
                t.exporter.flush().map_err(|e| ApiError::new("io", e))?;
                t.dir.clone()
            }
            (None, None) => return Err(ApiError::new("bad_request", "tracing is off; pass the directory of an exported trace")),
        };
        if !dir.is_dir() {
            return Err(ApiError::new("not_found", format!("no trace directory {}", dir.display())));
        }
        EventStore::load(&dir).map_err(|e| ApiError::new("io", e))
    }
}

fn unit_members(wf: &RegisteredWorkflow) -> Vec<Vec<String>> {
    let nodes = wf.graph().nodes();
    wf.units().iter().map(|u| u.members.iter().map(|&m| nodes[m].name.clone()).collect()).collect()
}

fn describe(wf: &RegisteredWorkflow) -> RegisterResponse {
    RegisterResponse {
        name: wf.name().to_owned(),
        inputs: wf.graph().inputs().to_vec(),
        units: unit_members(wf),
        recorded: wf.recorded_units().iter().map(|u| u + 1).collect(),
        read_only: wf.is_read_only(),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Json {
    serde_json::to_value(v).unwrap_or(Json::Null)
}

fn engine_error(e: EngineError) -> ApiError {
    ApiError::new("engine", e)
}

fn workflow_error(e: WorkflowError) -> ApiError {
    ApiError::new("invalid_workflow", e)
}

fn dispatch_error(e: DispatchError) -> ApiError {
    match e {
        DispatchError::UnknownWorkflow(_) => ApiError::new("unknown_workflow", e),
        DispatchError::InputMismatch { .. } => ApiError::new("bad_request", e),
        DispatchError::Crashed => ApiError::new("unavailable", e),
        DispatchError::Workflow(w) => workflow_error(w),
        DispatchError::Engine(e) => engine_error(e),
        other => ApiError::new("internal", other),
    }
}

fn bench_error(e: BenchError) -> ApiError {
    match e {
        BenchError::UnknownWorkload(_) => ApiError::new("not_found", e),
        other => ApiError::new("bench", other),
    }
}

fn harness_error(e: HarnessError) -> ApiError {
    ApiError::new("harness", e)
}

fn query_error(e: QueryError) -> ApiError {
    match e {
        QueryError::NoHistory | QueryError::UnknownTable(_) => ApiError::new("not_found", e),
        QueryError::KeyArity { .. } => ApiError::new("bad_request", e),
        QueryError::Io(_) => ApiError::new("io", e),
    }
}
