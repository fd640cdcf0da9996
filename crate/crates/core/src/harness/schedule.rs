use std::collections::{BTreeMap, VecDeque};

use parking_lot::Mutex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dispatcher::{DispatchError, Dispatcher, FaultHooks, HookAction, HookPoint, InvocationId, Outcome};
use crate::engine::Engine;
use crate::value::Datum;

/// Where the harness interferes with an invocation. Units are 1-based
/// topological positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "point", rename_all = "snake_case")]
pub enum InjectionPoint {
    BeforeUnit { unit: usize },
    AfterBodyBeforeCommit { unit: usize },
    AfterCommit { unit: usize },
    /// The workflow completes but its response never reaches the client.
    DropResponse,
    /// The unit's transaction aborts with a retryable error `count` times.
    TransientUnitFault { unit: usize, count: u32 },
}

impl InjectionPoint {
    pub fn is_crash(&self) -> bool {
        !matches!(self, InjectionPoint::TransientUnitFault { .. })
    }
}

/// Injection points applied in order: only the first unfired point is armed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CrashSchedule {
    pub points: Vec<InjectionPoint>,
}

impl CrashSchedule {
    pub fn new(points: Vec<InjectionPoint>) -> Self {
        CrashSchedule { points }
    }

    pub fn crashes(&self) -> usize {
        self.points.iter().filter(|p| p.is_crash()).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("schedule serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Up to `max_len` points over the units of an `n`-unit workflow.
    pub fn random(rng: &mut impl Rng, n: usize, max_len: usize) -> Self {
        let len = rng.gen_range(0..=max_len);
        let points = (0..len)
            .map(|_| {
                let unit = rng.gen_range(1..=n);
                match rng.gen_range(0..5) {
                    0 => InjectionPoint::BeforeUnit { unit },
                    1 => InjectionPoint::AfterBodyBeforeCommit { unit },
                    2 => InjectionPoint::AfterCommit { unit },
                    3 => InjectionPoint::DropResponse,
                    _ => InjectionPoint::TransientUnitFault { unit, count: rng.gen_range(1..=3) },
                }
            })
            .collect();
        CrashSchedule { points }
    }
}

/// Hooks that replay a schedule against one invocation.
pub struct ScheduleHooks {
    state: Mutex<HookState>,
}

struct HookState {
    pending: VecDeque<InjectionPoint>,
    transient_left: u32,
    fired: Vec<InjectionPoint>,
}

impl ScheduleHooks {
    pub fn new(schedule: &CrashSchedule) -> Self {
        let pending: VecDeque<_> = schedule.points.iter().copied().collect();
        ScheduleHooks { state: Mutex::new(HookState { pending, transient_left: 0, fired: Vec::new() }) }
    }

    pub fn fired(&self) -> Vec<InjectionPoint> {
        self.state.lock().fired.clone()
    }

    pub fn unfired(&self) -> Vec<InjectionPoint> {
        self.state.lock().pending.iter().copied().collect()
    }
}

impl FaultHooks for ScheduleHooks {
    fn at(&self, _: &str, point: HookPoint) -> HookAction {
        let mut s = self.state.lock();
        let Some(&head) = s.pending.front() else { return HookAction::Continue };
        let hit = match (head, point) {
            (InjectionPoint::BeforeUnit { unit }, HookPoint::BeforeUnit { unit: u, .. }) => unit == u,
            (InjectionPoint::AfterBodyBeforeCommit { unit }, HookPoint::AfterBody { unit: u, .. }) => unit == u,
            (InjectionPoint::TransientUnitFault { unit, .. }, HookPoint::AfterBody { unit: u, .. }) => unit == u,
            (InjectionPoint::AfterCommit { unit }, HookPoint::AfterCommit { unit: u }) => unit == u,
            (InjectionPoint::DropResponse, HookPoint::BeforeResponse) => true,
            _ => false,
        };
        if !hit {
            return HookAction::Continue;
        }
        if let InjectionPoint::TransientUnitFault { count, .. } = head {
            if s.transient_left == 0 {
                s.transient_left = count;
            }
            s.transient_left -= 1;
            if s.transient_left == 0 {
                s.pending.pop_front();
                s.fired.push(head);
            }
            return HookAction::Transient;
        }
        s.pending.pop_front();
        s.fired.push(head);
        HookAction::Crash
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error("invocation did not complete after {0} resubmissions")]
    NoCompletion(usize),
}

#[derive(Debug, Clone)]
pub struct ScheduleRun {
    pub outcome: Outcome,
    /// Times the simulated client resubmitted after a crash.
    pub resubmissions: usize,
    pub fired: Vec<InjectionPoint>,
    /// Points the execution never reached.
    pub never_fired: Vec<InjectionPoint>,
}

/// Runs one invocation under `schedule`, resubmitting with the same ID after
/// every crash the way a client does after a timeout.
pub fn run_with_schedule(
    d: &Dispatcher,
    workflow: &str,
    id: InvocationId,
    inputs: &BTreeMap<String, Datum>,
    schedule: &CrashSchedule,
) -> Result<ScheduleRun, HarnessError> {
    let hooks = ScheduleHooks::new(schedule);
    let limit = schedule.crashes() + 1;
    let mut resubmissions = 0;
    loop {
        match d.invoke_with(workflow, id, inputs, &hooks) {
            Ok(outcome) => {
                return Ok(ScheduleRun { outcome, resubmissions, fired: hooks.fired(), never_fired: hooks.unfired() })
            }
            Err(DispatchError::Crashed) if resubmissions < limit => resubmissions += 1,
            Err(DispatchError::Crashed) => return Err(HarnessError::NoCompletion(resubmissions)),
            Err(e) => return Err(e.into()),
        }
    }
}

/// Result of comparing a faulty run with the crash-free oracle.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub run: ScheduleRun,
    pub oracle: Outcome,
    pub state_equal: bool,
    pub output_equal: bool,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.state_equal && self.output_equal
    }
}

/// Crash-free reference: runs the invocation on a copy of the engine.
pub fn oracle_run(
    d: &Dispatcher,
    workflow: &str,
    id: InvocationId,
    inputs: &BTreeMap<String, Datum>,
) -> Result<(Outcome, Engine), HarnessError> {
    let oracle = d.fork(d.engine().fork())?;
    let outcome = oracle.invoke(workflow, id, inputs)?;
    Ok((outcome, oracle.engine().clone()))
}

/// Runs `schedule` on `d` and checks that application state and the sink
/// output equal those of a crash-free run from the same starting state.
pub fn check_schedule(
    d: &Dispatcher,
    workflow: &str,
    id: InvocationId,
    inputs: &BTreeMap<String, Datum>,
    schedule: &CrashSchedule,
) -> Result<Verdict, HarnessError> {
    let (oracle, expected) = oracle_run(d, workflow, id, inputs)?;
    let run = run_with_schedule(d, workflow, id, inputs, schedule)?;
    let state_equal = d.engine().same_user_state(&expected);
    let output_equal = run.outcome.encode() == oracle.encode();
    Ok(Verdict { run, oracle, state_equal, output_equal })
}
