//! Model checker for recording safety. A labeled DAG becomes a synthetic
//! workflow over one shared counter: read units observe its version, write
//! units bump it and log what they saw, and every unit passes on the
//! provenance of all its inputs. Any re-execution that mixes old and new
//! observations therefore shows up in the final state or the sink output.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::graphs::linear_extensions;
use super::schedule::{run_with_schedule, CrashSchedule, HarnessError, InjectionPoint};
use crate::dispatcher::{Dispatcher, DispatcherConfig, InvocationId, Outcome};
use crate::engine::{Engine, EngineConfig, PreparedStatement, TableSchema, TxnMode};
use crate::sfr::{sfr, AnalysisGraph};
use crate::value::{Datum, Value, ValueType};
use crate::workflow::{create_workflow, FunctionDef, RecordingPolicy, RegisteredWorkflow, Targets, WiringSpec};

const WORKFLOW: &str = "model";

/// Which crash schedules to explore.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleSpace {
    /// Every single and ordered pair of crashes over all injection points.
    Full,
    /// Single and paired crashes after unit commits only. Crashing before a
    /// unit, or after its body but before commit, leaves the same database
    /// state as crashing after the previous commit, so nothing is lost in
    /// sequential mode.
    Reduced,
}

/// End state of one run: the sink output, the counter, and the write log
/// keyed by `unit@version`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub sink: String,
    pub version: i64,
    pub effects: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Counterexample {
    pub graph: AnalysisGraph,
    pub recorded: BTreeSet<usize>,
    pub schedule: CrashSchedule,
    pub observed: Observation,
    /// Outcomes of crash-free runs, one per valid unit order.
    pub expected: BTreeSet<Observation>,
}

#[derive(Debug, Clone)]
pub enum ModelVerdict {
    Pass { schedules: usize },
    Counterexample(Box<Counterexample>),
}

impl ModelVerdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, ModelVerdict::Pass { .. })
    }
}

pub fn injection_points(n: usize, space: ScheduleSpace) -> Vec<InjectionPoint> {
    match space {
        ScheduleSpace::Reduced => (1..=n).map(|unit| InjectionPoint::AfterCommit { unit }).collect(),
        ScheduleSpace::Full => (1..=n)
            .flat_map(|unit| {
                [
                    InjectionPoint::BeforeUnit { unit },
                    InjectionPoint::AfterBodyBeforeCommit { unit },
                    InjectionPoint::AfterCommit { unit },
                ]
            })
            .chain([InjectionPoint::DropResponse])
            .collect(),
    }
}

/// The empty schedule, every single crash and every ordered pair.
pub fn schedules(n: usize, space: ScheduleSpace) -> Vec<CrashSchedule> {
    let points = injection_points(n, space);
    let mut out = vec![CrashSchedule::default()];
    out.extend(points.iter().map(|&p| CrashSchedule::new(vec![p])));
    for &a in &points {
        out.extend(points.iter().map(|&b| CrashSchedule::new(vec![a, b])));
    }
    out
}

/// Crash-free outcomes for every order the units could run in.
pub fn oracle_observations(g: &AnalysisGraph) -> BTreeSet<Observation> {
    let n = g.len();
    let mut parents = vec![Vec::new(); n];
    for (a, b) in g.edges() {
        parents[b].push(a);
    }
    linear_extensions(n, &g.edges())
        .into_iter()
        .map(|order| {
            let mut version = 0;
            let mut prov = vec![String::new(); n];
            let mut effects = BTreeMap::new();
            for u in order {
                let upstream: Vec<&str> = parents[u].iter().map(|&p| prov[p].as_str()).collect();
                prov[u] = provenance(&g.names[u], g.has_write[u], version, &upstream);
                if g.has_write[u] {
                    effects.insert(format!("{}@{version}", g.names[u]), prov[u].clone());
                    version += 1;
                }
            }
            Observation { sink: prov[n - 1].clone(), version, effects }
        })
        .collect()
}

fn provenance(name: &str, write: bool, version: i64, upstream: &[&str]) -> String {
    let mark = if write { '!' } else { '@' };
    format!("{name}{mark}{version}[{}]", upstream.join(","))
}

fn schema() -> [TableSchema; 2] {
    [
        TableSchema::new("Cell")
            .column("id", ValueType::Int64)
            .column("version", ValueType::Int64)
            .primary_key(["id"])
            .partition_by("id"),
        TableSchema::new("Effects")
            .column("unit", ValueType::Text)
            .column("seen", ValueType::Int64)
            .column("prov", ValueType::Text)
            .primary_key(["unit", "seen"])
            .partition_by("unit"),
    ]
}

fn unit_function(g: &AnalysisGraph, u: usize, parents: &[usize]) -> FunctionDef {
    let name = g.names[u].clone();
    let write = g.has_write[u];
    let mut f = FunctionDef::new(&name)
        .statement(PreparedStatement::select_by_key("read", "Cell", ["id"]).columns(["version"]))
        .output(format!("o{u}"));
    if write {
        f = f
            .statement(PreparedStatement::update("bump", "Cell", ["version"], ["id"]))
            .statement(PreparedStatement::insert("log", "Effects"));
    }
    let inputs: Vec<String> = if parents.is_empty() { vec!["seed".into()] } else { parents.iter().map(|p| format!("from{p}")).collect() };
    for i in &inputs {
        f = f.input(i.clone());
    }
    let from_parents = !parents.is_empty();
    f.body(move |ctx| {
        let upstream: Vec<String> = if from_parents {
            inputs.iter().map(|i| ctx.value(i).map(|v| v.as_str().unwrap_or_default().to_owned())).collect::<Result<_, _>>()?
        } else {
            Vec::new()
        };
        let upstream: Vec<&str> = upstream.iter().map(String::as_str).collect();
        let version = ctx.exec("read", &[Value::Int64(0)])?.first("version").and_then(Value::as_i64).unwrap_or(0);
        let prov = provenance(&name, write, version, &upstream);
        if write {
            ctx.exec("bump", &[Value::Int64(version + 1), Value::Int64(0)])?;
            ctx.exec("log", &[Value::Text(name.clone()), Value::Int64(version), Value::Text(prov.clone())])?;
        }
        ctx.output(&format!("o{u}"), prov)
    })
}

/// Builds the synthetic workflow for `g` and registers it recording exactly
/// `recorded`.
pub fn synthetic_workflow(g: &AnalysisGraph, recorded: &BTreeSet<usize>) -> Arc<RegisteredWorkflow> {
    let n = g.len();
    let mut parents = vec![Vec::new(); n];
    for (a, b) in g.edges() {
        parents[b].push(a);
    }
    let functions: Vec<FunctionDef> = (0..n).map(|u| unit_function(g, u, &parents[u])).collect();
    let mut wiring = WiringSpec::new();
    let sources: Vec<String> = (0..n).filter(|&u| parents[u].is_empty()).map(|u| format!("{}.seed", g.names[u])).collect();
    wiring.0.insert("seed".into(), Targets::Many(sources));
    for u in 0..n {
        let targets: Vec<String> = g.children[u].iter().map(|&c| format!("{}.from{u}", g.names[c])).collect();
        let targets = if u == n - 1 { vec!["out".to_string()] } else { targets };
        wiring.0.insert(format!("o{u}"), Targets::Many(targets));
    }
    let graph = create_workflow(WORKFLOW, functions, wiring).expect("synthetic workflow is well formed");
    crate::workflow::register(&graph, RecordingPolicy::Selective)
        .expect("no groups to fuse")
        .with_recorded(recorded)
}

/// A ready-to-copy engine and dispatcher for one labeled graph.
pub struct ModelHarness {
    template: Dispatcher,
    expected: BTreeSet<Observation>,
    graph: AnalysisGraph,
    recorded: BTreeSet<usize>,
}

impl ModelHarness {
    pub fn new(g: &AnalysisGraph, recorded: &BTreeSet<usize>) -> Result<Self, HarnessError> {
        let engine = Engine::new(EngineConfig { partitions: 1 });
        for s in schema() {
            engine.create_table(s)?;
        }
        engine.run(TxnMode::MultiPartition, |t| {
            t.exec(&PreparedStatement::insert("init", "Cell"), &[Value::Int64(0), Value::Int64(0)]).map(|_| ())
        })?;
        let template = Dispatcher::new(engine, DispatcherConfig::default())?;
        template.install(synthetic_workflow(g, recorded))?;
        Ok(ModelHarness {
            template,
            expected: oracle_observations(g),
            graph: g.clone(),
            recorded: recorded.clone(),
        })
    }

    pub fn expected(&self) -> &BTreeSet<Observation> {
        &self.expected
    }

    /// Runs one schedule from the initial state.
    pub fn observe(&self, schedule: &CrashSchedule) -> Result<Observation, HarnessError> {
        let d = self.template.fork(self.template.engine().fork())?;
        let inputs = BTreeMap::from([("seed".to_string(), Datum::from(Value::Int64(0)))]);
        let run = run_with_schedule(&d, WORKFLOW, InvocationId::new(1, 1), &inputs, schedule)?;
        let sink = match &run.outcome {
            Outcome::Success(m) => m.get("out").and_then(|d| d.as_value()).and_then(Value::as_str).unwrap_or_default().to_owned(),
            Outcome::Failure(f) => format!("failed {}: {}", f.error_class, f.message),
        };
        let snap = d.engine().snapshot();
        let version = snap.rows("Cell").and_then(|r| r.values().next()).and_then(|row| row[1].as_i64()).unwrap_or(-1);
        let effects = snap
            .rows("Effects")
            .map(|rows| {
                rows.values()
                    .map(|r| {
                        let key = format!("{}@{}", r[0].as_str().unwrap_or_default(), r[1].as_i64().unwrap_or_default());
                        (key, r[2].as_str().unwrap_or_default().to_owned())
                    })
                    .collect()
            })
            .unwrap_or_default();
        Ok(Observation { sink, version, effects })
    }

    pub fn check(&self, schedules: &[CrashSchedule]) -> Result<ModelVerdict, HarnessError> {
        for s in schedules {
            let observed = self.observe(s)?;
            if !self.expected.contains(&observed) {
                return Ok(ModelVerdict::Counterexample(Box::new(Counterexample {
                    graph: self.graph.clone(),
                    recorded: self.recorded.clone(),
                    schedule: s.clone(),
                    observed,
                    expected: self.expected.clone(),
                })));
            }
        }
        Ok(ModelVerdict::Pass { schedules: schedules.len() })
    }
}

/// Checks every schedule in `space` against the crash-free oracle.
pub fn model_check(
    g: &AnalysisGraph,
    recorded: &BTreeSet<usize>,
    space: ScheduleSpace,
) -> Result<ModelVerdict, HarnessError> {
    ModelHarness::new(g, recorded)?.check(&schedules(g.len(), space))
}

/// Totals of an exhaustive sweep.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepReport {
    pub graphs: usize,
    pub schedules: usize,
    pub counterexamples: Vec<Counterexample>,
}

/// Model-checks each graph with the units chosen by the analysis.
pub fn sweep(graphs: &[AnalysisGraph], space: ScheduleSpace, keep: usize) -> Result<SweepReport, HarnessError> {
    let mut report = SweepReport::default();
    for g in graphs {
        let recorded = sfr(g).recorded;
        report.graphs += 1;
        match model_check(g, &recorded, space)? {
            ModelVerdict::Pass { schedules } => report.schedules += schedules,
            ModelVerdict::Counterexample(c) => {
                if report.counterexamples.len() < keep {
                    report.counterexamples.push(*c);
                }
            }
        }
    }
    Ok(report)
}
