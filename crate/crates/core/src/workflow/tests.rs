use std::collections::BTreeSet;

use super::doc::WorkflowDoc;
use super::*;
use crate::engine::PreparedStatement;

fn check_avail() -> FunctionDef {
    FunctionDef::new("checkAvail")
        .statement(PreparedStatement::select("q", "HotelAvail", ["hotelID", "date"]).columns(["numAvail"]))
        .input("availIn")
        .output("availOut")
        .site_hint("availIn")
}

fn reserve() -> FunctionDef {
    FunctionDef::new("reserve")
        .statement(PreparedStatement::update("u", "HotelAvail", ["numAvail"], ["hotelID", "date"]))
        .input("reserveIn")
        .output("reserveOut")
}

fn send_email() -> FunctionDef {
    FunctionDef::new("sendEmail").input("emailIn").output("emailOut")
}

fn reservation_wiring() -> WiringSpec {
    WiringSpec::from_json(r#"{"in":"availIn","availOut":"reserveIn","reserveOut":"emailIn","emailOut":"out"}"#).unwrap()
}

fn hotel() -> WorkflowGraph {
    create_workflow("reservation", vec![check_avail(), reserve(), send_email()], reservation_wiring()).unwrap()
}

fn names(g: &WorkflowGraph) -> Vec<&str> {
    g.nodes().iter().map(|f| f.name.as_str()).collect()
}

#[test]
fn reservation_chain() {
    let g = hotel();
    assert_eq!(names(&g), ["checkAvail", "reserve", "sendEmail"]);
    assert_eq!(g.edges(), vec![(0, 1), (1, 2)]);
    assert_eq!(g.inputs(), ["in"]);
    assert_eq!(g.outputs(), vec![("out".to_string(), "emailOut".to_string())]);
    assert_eq!(g.bindings(0), [Source::Workflow("in".into())]);
}

#[test]
fn topological_order_follows_edges_then_registration() {
    let a = FunctionDef::new("a").input("x").output("ao");
    let b = FunctionDef::new("b").input("y").output("bo");
    let c = FunctionDef::new("c").input("p").input("q").output("co");
    // registered sink first; sources keep their relative order
    let w = WiringSpec::new().wire("in", "x").wire("in", "y").wire("ao", "q").wire("bo", "p");
    let g = create_workflow("w", vec![c, b, a], w).unwrap();
    assert_eq!(names(&g), ["b", "a", "c"]);
}

#[test]
fn creation_errors() {
    let back_edge = reservation_wiring().wire("reserveOut", "availIn");
    let err = create_workflow("w", vec![check_avail(), reserve(), send_email()], back_edge).unwrap_err();
    assert!(matches!(err, WorkflowError::MultiplyWired(_)));

    let cyc = WiringSpec::new().wire("availOut", "reserveIn").wire("reserveOut", "availIn");
    assert!(matches!(create_workflow("w", vec![check_avail(), reserve()], cyc), Err(WorkflowError::CycleDetected(_))));

    let two_sinks = WiringSpec::new().wire("in", "availIn").wire("in", "reserveIn");
    assert!(matches!(create_workflow("w", vec![check_avail(), reserve()], two_sinks), Err(WorkflowError::MultipleSinks(_))));

    let unwired = WiringSpec::new().wire("in", "availIn");
    assert!(matches!(create_workflow("w", vec![check_avail(), reserve()], unwired), Err(WorkflowError::UnwiredInput(_))));

    let unknown = reservation_wiring().wire("in", "nope.x");
    assert!(matches!(
        create_workflow("w", vec![check_avail(), reserve(), send_email()], unknown),
        Err(WorkflowError::UnknownName(_))
    ));

    let dangling = reservation_wiring().wire("availOut", "result");
    assert!(matches!(
        create_workflow("w", vec![check_avail(), reserve(), send_email()], dangling),
        Err(WorkflowError::DanglingOutput(_))
    ));

    assert!(matches!(create_workflow("w", vec![], WiringSpec::new()), Err(WorkflowError::EmptyWorkflow)));
    assert!(matches!(
        create_workflow("w", vec![send_email(), send_email()], WiringSpec::new()),
        Err(WorkflowError::DuplicateName(_))
    ));
}

#[test]
fn qualified_names_disambiguate() {
    let f = FunctionDef::new("f").input("x").output("v");
    let g = FunctionDef::new("g").input("x").output("v");
    let h = FunctionDef::new("h").input("a").input("b").output("r");
    let ambiguous = WiringSpec::new().wire("in", "x");
    assert!(matches!(
        create_workflow("w", vec![f.clone(), g.clone(), h.clone()], ambiguous),
        Err(WorkflowError::AmbiguousName(_))
    ));
    let w = WiringSpec::new().wire("in", "f.x").wire("in", "g.x").wire("f.v", "a").wire("g.v", "b");
    let graph = create_workflow("w", vec![f, g, h], w).unwrap();
    assert_eq!(graph.edges(), vec![(0, 2), (1, 2)]);
}

#[test]
fn grouping() {
    let g = hotel().group_functions(&["checkAvail", "reserve"]).unwrap();
    assert_eq!(g.groups(), [BTreeSet::from([0, 1])]);
    assert!(matches!(hotel().group_functions(&["checkAvail", "sendEmail"]), Err(WorkflowError::NotConnected(_))));
    assert!(matches!(g.clone().group_functions(&["reserve", "sendEmail"]), Err(WorkflowError::OverlappingGroups(_))));
    assert!(matches!(hotel().group_functions(&["nobody"]), Err(WorkflowError::UnknownNode(_))));
}

#[test]
fn hotel_registration_fuses_and_records_one_unit() {
    let g = hotel().group_functions(&["checkAvail", "reserve"]).unwrap();
    let r = register(&g, RecordingPolicy::Selective).unwrap();
    assert_eq!(r.unit_names(), ["checkAvail+reserve", "sendEmail"]);
    assert_eq!(r.recorded_units(), BTreeSet::from([0]));
    assert_eq!(r.units()[0].site, Some(Source::Workflow("in".into())));
    assert_eq!(r.txn_count(), 2);
    let naive = r.with_policy(RecordingPolicy::All);
    assert_eq!(naive.recorded_units(), BTreeSet::from([0, 1]));
}

#[test]
fn read_only_workflow_records_nothing() {
    let g = create_workflow("w", vec![check_avail()], WiringSpec::new().wire("in", "availIn")).unwrap();
    let r = register(&g, RecordingPolicy::Selective).unwrap();
    assert!(r.recorded_units().is_empty());
    assert!(r.is_read_only());
}

#[test]
fn site_hint_conflicts() {
    let a = FunctionDef::new("a").input("x").output("ao").site_hint("x");
    let b = FunctionDef::new("b").input("y").input("z").output("bo").site_hint("y");
    let w = WiringSpec::new().wire("in1", "x").wire("in2", "y").wire("ao", "z");
    let g = create_workflow("w", vec![a.clone(), b.clone()], w).unwrap().group_functions(&["a", "b"]).unwrap();
    assert!(matches!(register(&g, RecordingPolicy::Selective), Err(WorkflowError::SiteHintConflict { .. })));

    // the same workflow input on both sides is fine
    let w = WiringSpec::new().wire("in1", "x").wire("in1", "y").wire("ao", "z");
    let g = create_workflow("w", vec![a.clone(), b.clone()], w).unwrap().group_functions(&["a", "b"]).unwrap();
    assert!(register(&g, RecordingPolicy::Selective).is_ok());

    // hinting an input computed inside the group
    let b2 = FunctionDef::new("b").input("y").input("z").output("bo").site_hint("z");
    let a2 = FunctionDef::new("a").input("x").output("ao");
    let w = WiringSpec::new().wire("in1", "x").wire("in2", "y").wire("ao", "z");
    let g = create_workflow("w", vec![a2, b2], w).unwrap().group_functions(&["a", "b"]).unwrap();
    assert!(matches!(register(&g, RecordingPolicy::Selective), Err(WorkflowError::SiteHintConflict { .. })));
}

#[test]
fn sandwiching_group_is_rejected() {
    let a = FunctionDef::new("a").input("x").output("ao");
    let b = FunctionDef::new("b").input("y").output("bo");
    let c = FunctionDef::new("c").input("p").input("q").output("co");
    let w = WiringSpec::new().wire("in", "x").wire("ao", "y").wire("ao", "p").wire("bo", "q");
    let g = create_workflow("w", vec![a, b, c], w).unwrap().group_functions(&["a", "c"]).unwrap();
    assert!(matches!(register(&g, RecordingPolicy::Selective), Err(WorkflowError::GroupCreatesCycle(_))));
}

#[test]
fn document_round_trip() {
    let g = hotel().group_functions(&["checkAvail", "reserve"]).unwrap();
    let doc = WorkflowDoc::export(&g);
    assert_eq!(doc.order, ["checkAvail", "reserve", "sendEmail"]);
    assert_eq!(doc.units, vec![vec!["checkAvail".to_string(), "reserve".into()], vec!["sendEmail".into()]]);
    assert!(doc.edges.contains(&doc::EdgeDoc { from: "checkAvail.availOut".into(), to: "reserve.reserveIn".into() }));
    assert!(doc.edges.contains(&doc::EdgeDoc { from: "sendEmail.emailOut".into(), to: "out".into() }));
    let text = doc.to_json_pretty();
    let back = WorkflowDoc::parse(&text).unwrap();
    assert_eq!(back, doc);
    let rebuilt = back.build().unwrap();
    assert_eq!(names(&rebuilt), names(&g));
    assert_eq!(rebuilt.groups(), g.groups());
    assert_eq!(rebuilt.nodes()[0].site_hint.as_deref(), Some("availIn"));
}
