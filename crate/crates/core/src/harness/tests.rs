use std::collections::{BTreeMap, BTreeSet};

use super::graphs::labeled_graphs;
use super::model::{oracle_observations, schedules};
use super::*;
use crate::dispatcher::{DispatcherConfig, Outcome};
use crate::engine::{Engine, EngineConfig, PreparedStatement, TableSchema, TxnMode};
use crate::sfr::{sfr, AnalysisGraph};
use crate::value::{Value, ValueType};
use crate::workflow::{create_workflow, FunctionDef, RecordingPolicy, WiringSpec};

fn forked_graph() -> AnalysisGraph {
    AnalysisGraph::numbered(4, &[(0, 1), (0, 2), (1, 3), (2, 3)], vec![false, false, true, false]).unwrap()
}

#[test]
fn schedule_json_is_stable() {
    let s = CrashSchedule::new(vec![
        InjectionPoint::AfterCommit { unit: 1 },
        InjectionPoint::DropResponse,
        InjectionPoint::TransientUnitFault { unit: 2, count: 3 },
    ]);
    let text = s.to_json();
    assert_eq!(
        text,
        r#"{"points":[{"point":"after_commit","unit":1},{"point":"drop_response"},{"point":"transient_unit_fault","unit":2,"count":3}]}"#
    );
    assert_eq!(CrashSchedule::from_json(&text).unwrap(), s);
}

#[test]
fn oracle_covers_every_order() {
    let obs = oracle_observations(&forked_graph());
    assert_eq!(obs.len(), 2);
    let sinks: BTreeSet<&str> = obs.iter().map(|o| o.sink.as_str()).collect();
    assert!(sinks.contains("F4@1[F2@0[F1@0[]],F3!0[F1@0[]]]"));
    assert!(sinks.contains("F4@1[F2@1[F1@0[]],F3!0[F1@0[]]]"));
}

#[test]
fn forked_graph_passes_with_fork_recorded() {
    let g = forked_graph();
    assert_eq!(sfr(&g).recorded, BTreeSet::from([0, 2]));
    let v = model_check(&g, &BTreeSet::from([0, 2]), ScheduleSpace::Full).unwrap();
    assert!(matches!(v, ModelVerdict::Pass { schedules: 183 }), "{v:?}");
}

#[test]
fn forked_graph_without_fork_record_has_counterexample() {
    let v = model_check(&forked_graph(), &BTreeSet::from([2]), ScheduleSpace::Reduced).unwrap();
    let ModelVerdict::Counterexample(c) = v else { panic!("expected a counterexample") };
    // crash once F1 and F3 have both run
    assert_eq!(c.schedule.points, [InjectionPoint::AfterCommit { unit: 3 }]);
    assert!(c.observed.sink.contains("F1@0") && c.observed.sink.contains("F1@1"), "{}", c.observed.sink);
}

#[test]
fn recording_everything_always_passes() {
    for g in labeled_graphs(3) {
        let all: BTreeSet<usize> = (0..g.len()).collect();
        assert!(model_check(&g, &all, ScheduleSpace::Full).unwrap().is_pass());
    }
}

#[test]
fn selective_recording_passes_small_graphs_in_full_space() {
    for n in 1..=3 {
        for g in labeled_graphs(n) {
            let v = model_check(&g, &sfr(&g).recorded, ScheduleSpace::Full).unwrap();
            assert!(v.is_pass(), "{g:?}: {v:?}");
        }
    }
}

#[test]
fn withholding_a_writer_is_caught() {
    for g in labeled_graphs(3) {
        let recorded = sfr(&g).recorded;
        for w in (0..g.len()).filter(|&i| g.has_write[i]) {
            let mut less = recorded.clone();
            less.remove(&w);
            assert!(!model_check(&g, &less, ScheduleSpace::Reduced).unwrap().is_pass(), "{g:?} without {w}");
        }
    }
}

#[test]
fn reduced_space_is_smaller() {
    assert_eq!(schedules(6, ScheduleSpace::Reduced).len(), 1 + 6 + 36);
    assert_eq!(schedules(6, ScheduleSpace::Full).len(), 1 + 19 + 19 * 19);
}

fn counter_dispatcher() -> Dispatcher {
    let e = Engine::new(EngineConfig { partitions: 2 });
    e.create_table(
        TableSchema::new("Acct")
            .column("id", ValueType::Int64)
            .column("bal", ValueType::Int64)
            .primary_key(["id"])
            .partition_by("id"),
    )
    .unwrap();
    e.run(TxnMode::MultiPartition, |t| {
        t.exec(&PreparedStatement::insert("i", "Acct"), &[Value::Int64(1), Value::Int64(100)]).map(|_| ())
    })
    .unwrap();
    let read = FunctionDef::new("read")
        .statement(PreparedStatement::select_by_key("g", "Acct", ["id"]).columns(["bal"]))
        .input("id")
        .output("bal")
        .site_hint("id")
        .body(|ctx| {
            let id = ctx.value("id")?.clone();
            let bal = ctx.exec("g", &[id])?.first("bal").cloned().unwrap_or(Value::Null);
            ctx.output("bal", bal)
        });
    let pay = FunctionDef::new("pay")
        .statement(PreparedStatement::update("s", "Acct", ["bal"], ["id"]))
        .input("have")
        .input("who")
        .output("left")
        .site_hint("who")
        .body(|ctx| {
            let left = ctx.i64("have")? - 10;
            let who = ctx.value("who")?.clone();
            ctx.exec("s", &[Value::Int64(left), who])?;
            ctx.output("left", left)
        });
    let w = WiringSpec::new().wire("id", "read.id").wire("id", "who").wire("bal", "have").wire("left", "out");
    let g = create_workflow("pay", vec![read, pay], w).unwrap();
    let d = Dispatcher::new(e, DispatcherConfig::default()).unwrap();
    d.register(&g, RecordingPolicy::Selective).unwrap();
    d
}

fn one() -> BTreeMap<String, crate::value::Datum> {
    BTreeMap::from([("id".to_string(), Value::Int64(1).into())])
}

#[test]
fn crash_after_commit_short_circuits_on_resume() {
    let d = counter_dispatcher();
    let s = CrashSchedule::new(vec![InjectionPoint::AfterCommit { unit: 2 }]);
    let v = check_schedule(&d, "pay", InvocationId::new(1, 1), &one(), &s).unwrap();
    assert!(v.passed());
    assert_eq!(v.run.resubmissions, 1);
    assert_eq!(d.stats().short_circuits, 1);
}

#[test]
fn crash_before_commit_reexecutes() {
    let d = counter_dispatcher();
    let s = CrashSchedule::new(vec![InjectionPoint::AfterBodyBeforeCommit { unit: 2 }]);
    let v = check_schedule(&d, "pay", InvocationId::new(1, 1), &one(), &s).unwrap();
    assert!(v.passed());
    assert_eq!(d.stats().units_executed, 2 + 1);
}

#[test]
fn empty_schedule_is_plain_invoke() {
    let d = counter_dispatcher();
    let run = run_with_schedule(&d, "pay", InvocationId::new(1, 1), &one(), &CrashSchedule::default()).unwrap();
    let plain = counter_dispatcher().invoke("pay", InvocationId::new(1, 1), &one()).unwrap();
    assert_eq!(run.outcome, plain);
    assert_eq!(run.resubmissions, 0);
}

#[test]
fn unreachable_points_are_reported() {
    let d = counter_dispatcher();
    let s = CrashSchedule::new(vec![InjectionPoint::AfterCommit { unit: 9 }]);
    let run = run_with_schedule(&d, "pay", InvocationId::new(1, 1), &one(), &s).unwrap();
    assert!(matches!(run.outcome, Outcome::Success(_)));
    assert_eq!(run.never_fired, s.points);
}

#[test]
fn transient_faults_count_down() {
    let d = counter_dispatcher();
    let s = CrashSchedule::new(vec![InjectionPoint::TransientUnitFault { unit: 2, count: 3 }]);
    let v = check_schedule(&d, "pay", InvocationId::new(1, 1), &one(), &s).unwrap();
    assert!(v.passed());
    assert_eq!(d.stats().retries, 3);
    assert_eq!(v.run.resubmissions, 0);
}

#[test]
fn random_campaign_passes() {
    let d = counter_dispatcher();
    let r = random_campaign(&d, "pay", 200, 7, 1, |_| one()).unwrap();
    assert_eq!((r.runs, r.passed), (200, 200), "{:?}", r.failures);
    assert!(r.crashes_injected > 100);
}
