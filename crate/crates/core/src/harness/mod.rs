//! Fault injection and verification: crash schedules replayed against the
//! dispatcher, a crash-free oracle on a copied engine, and an exhaustive
//! model checker over small labeled graphs.

pub mod graphs;
pub mod model;
mod schedule;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use model::{model_check, sweep, SweepReport, Counterexample, ModelHarness, ModelVerdict, Observation, ScheduleSpace};
pub use schedule::{
    check_schedule, oracle_run, run_with_schedule, CrashSchedule, HarnessError, InjectionPoint, ScheduleHooks,
    ScheduleRun, Verdict,
};

use crate::dispatcher::{Dispatcher, InvocationId};
use crate::value::Datum;

/// A failed comparison, replayable from its schedule and inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleFailure {
    pub workflow: String,
    pub workflow_id: String,
    pub inputs: serde_json::Value,
    pub schedule: CrashSchedule,
    pub state_equal: bool,
    pub output_equal: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CampaignReport {
    pub runs: usize,
    pub passed: usize,
    pub crashes_injected: usize,
    pub never_fired: usize,
    pub failures: Vec<ScheduleFailure>,
}

/// Runs `count` random schedules against `workflow`, each on a fresh
/// invocation with inputs from `make_inputs`, comparing every run with the
/// crash-free oracle.
pub fn random_campaign(
    d: &Dispatcher,
    workflow: &str,
    count: usize,
    seed: u64,
    client_id: u64,
    mut make_inputs: impl FnMut(&mut ChaCha8Rng) -> BTreeMap<String, Datum>,
) -> Result<CampaignReport, HarnessError> {
    let units = d.workflow(workflow).map(|w| w.units().len()).unwrap_or(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CampaignReport::default();
    for i in 0..count {
        let schedule = CrashSchedule::random(&mut rng, units, 3);
        let inputs = make_inputs(&mut rng);
        let id = InvocationId::new(client_id, i as u64 + 1);
        let v = check_schedule(d, workflow, id, &inputs, &schedule)?;
        report.runs += 1;
        report.crashes_injected += v.run.resubmissions;
        report.never_fired += v.run.never_fired.len();
        if v.passed() {
            report.passed += 1;
        } else {
            report.failures.push(ScheduleFailure {
                workflow: workflow.to_owned(),
                workflow_id: id.workflow_id(),
                inputs: crate::workflow::doc::outputs_to_json(&inputs),
                schedule,
                state_equal: v.state_equal,
                output_equal: v.output_equal,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
