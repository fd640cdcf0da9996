//! Shop, Hotel and Retwis workloads with their operation mixes, and a
//! driver that reports throughput, latency and the recorded fraction.

pub mod hotel;
pub mod retwis;
pub mod shop;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dispatcher::{DispatchError, Dispatcher, InvocationId};
use crate::engine::{EngineError, PreparedStatement, TxnMode};
use crate::value::{Datum, Value};
use crate::workflow::{RecordingPolicy, WorkflowError};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("seed mismatch: {0}")]
    SeedMismatch(String),
    #[error("unknown workload {0}")]
    UnknownWorkload(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
}

/// One operation of a workload with its expected structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpSpec {
    pub name: String,
    pub workflow: String,
    pub weight: f64,
    pub read_only: bool,
    pub txns: usize,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadMix {
    pub workload: String,
    pub ops: Vec<OpSpec>,
}

impl WorkloadMix {
    /// Expected share of unit executions that record, from the structure.
    pub fn expected_recorded_fraction(&self, d: &Dispatcher) -> f64 {
        let (mut rec, mut all) = (0.0, 0.0);
        for op in &self.ops {
            let wf = d.workflow(&op.workflow).expect("registered");
            rec += op.weight * wf.recorded_units().len() as f64;
            all += op.weight * wf.txn_count() as f64;
        }
        rec / all
    }

    pub fn pick(&self, rng: &mut impl Rng) -> usize {
        let x: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, op) in self.ops.iter().enumerate() {
            acc += op.weight;
            if x < acc {
                return i;
            }
        }
        self.ops.len() - 1
    }
}

type InputGen = dyn Fn(usize, &mut ChaCha8Rng, u64) -> BTreeMap<String, Datum> + Send + Sync;

/// A registered workload: its mix and a generator for operation inputs.
/// The generator receives the operation index, the RNG and the sequence
/// number of the request.
#[derive(Clone)]
pub struct Workload {
    pub mix: WorkloadMix,
    inputs: Arc<InputGen>,
}

impl Workload {
    pub fn new(mix: WorkloadMix, inputs: impl Fn(usize, &mut ChaCha8Rng, u64) -> BTreeMap<String, Datum> + Send + Sync + 'static) -> Self {
        Workload { mix, inputs: Arc::new(inputs) }
    }

    pub fn inputs(&self, op: usize, rng: &mut ChaCha8Rng, seq: u64) -> BTreeMap<String, Datum> {
        (self.inputs)(op, rng, seq)
    }

    pub fn op(&self, name: &str) -> Option<usize> {
        self.mix.ops.iter().position(|o| o.name == name)
    }
}

/// Creates the tables, loads the data and registers the workflows of the
/// named workload.
pub fn build(name: &str, d: &Dispatcher, policy: RecordingPolicy) -> Result<Workload, BenchError> {
    match name {
        "shop" => shop::build(d, policy, &shop::ShopScale::default()),
        "hotel" => hotel::build(d, policy, &hotel::HotelScale::default()),
        "retwis" => retwis::build(d, policy, &retwis::RetwisScale::default()),
        other => Err(BenchError::UnknownWorkload(other.to_owned())),
    }
}

/// Checks every registered workflow against the structure in the mix.
pub fn verify_structure(d: &Dispatcher, mix: &WorkloadMix) -> Result<(), BenchError> {
    let total: f64 = mix.ops.iter().map(|o| o.weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(BenchError::SeedMismatch(format!("{} weights sum to {total}", mix.workload)));
    }
    for op in &mix.ops {
        let wf = d
            .workflow(&op.workflow)
            .ok_or_else(|| BenchError::SeedMismatch(format!("{} is not registered", op.workflow)))?;
        let got = (wf.is_read_only(), wf.txn_count(), wf.query_count());
        if got != (op.read_only, op.txns, op.queries) {
            return Err(BenchError::SeedMismatch(format!(
                "{}: read-only/txns/queries {:?}, expected {:?}",
                op.name,
                got,
                (op.read_only, op.txns, op.queries)
            )));
        }
    }
    Ok(())
}

/// Counts the rows of `table` across all partitions.
pub fn count_rows(d: &Dispatcher, table: &str) -> Result<usize, EngineError> {
    let all = PreparedStatement::select("count", table, Vec::<String>::new());
    d.engine().run(TxnMode::MultiPartition, |t| Ok(t.exec(&all, &[])?.len()))
}

pub(crate) fn expect_rows(d: &Dispatcher, table: &str, want: usize) -> Result<(), BenchError> {
    let got = count_rows(d, table)?;
    if got != want {
        return Err(BenchError::SeedMismatch(format!("{table} has {got} rows, expected {want}")));
    }
    Ok(())
}

pub(crate) fn int(v: i64) -> Datum {
    Datum::from(Value::Int64(v))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpReport {
    pub name: String,
    pub count: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub workload: String,
    pub policy: RecordingPolicy,
    pub ops: u64,
    pub concurrency: usize,
    pub seed: u64,
    pub per_op: Vec<OpReport>,
    /// Unit transactions executed.
    pub transactions: u64,
    /// Of which recorded their output.
    pub recorded_transactions: u64,
    pub recorded_fraction: f64,
    pub elapsed_ms: f64,
    pub throughput: f64,
    pub p50_us: f64,
    pub p99_us: f64,
}

/// Runs `total` operations drawn from the mix with `concurrency` clients.
/// The operation sequence and inputs depend only on `seed`.
pub fn run_mix(
    d: &Dispatcher,
    workload: &Workload,
    total: usize,
    concurrency: usize,
    seed: u64,
) -> Result<BenchReport, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan: Vec<(usize, BTreeMap<String, Datum>)> = (0..total)
        .map(|i| {
            let op = workload.mix.pick(&mut rng);
            (op, workload.inputs(op, &mut rng, i as u64))
        })
        .collect();
    let before = d.stats();
    let next = AtomicUsize::new(0);
    let counts: Vec<(AtomicU64, AtomicU64)> = workload.mix.ops.iter().map(|_| Default::default()).collect();
    let latencies = Mutex::new(Vec::with_capacity(total));
    let error: Mutex<Option<BenchError>> = Mutex::new(None);
    let concurrency = concurrency.max(1);
    let start = Instant::now();
    std::thread::scope(|s| {
        for _ in 0..concurrency {
            s.spawn(|| {
                let client = match d.client_connect() {
                    Ok(c) => c,
                    Err(e) => {
                        *error.lock() = Some(e.into());
                        return;
                    }
                };
                let mut counter = 0;
                let mut mine = Vec::new();
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= plan.len() || error.lock().is_some() {
                        break;
                    }
                    let (op, inputs) = &plan[i];
                    counter += 1;
                    let t = Instant::now();
                    match d.invoke(&workload.mix.ops[*op].workflow, InvocationId::new(client, counter), inputs) {
                        Ok(outcome) => {
                            counts[*op].0.fetch_add(1, Ordering::Relaxed);
                            if !outcome.is_success() {
                                counts[*op].1.fetch_add(1, Ordering::Relaxed);
                            }
                        }
                        Err(e) => {
                            *error.lock() = Some(e.into());
                            break;
                        }
                    }
                    mine.push(t.elapsed());
                }
                latencies.lock().extend(mine);
            });
        }
    });
    let elapsed = start.elapsed();
    if let Some(e) = error.into_inner() {
        return Err(e);
    }
    let after = d.stats();
    let transactions = after.units_executed - before.units_executed;
    let recorded = after.recorded_executed - before.recorded_executed;
    let mut lat = latencies.into_inner();
    lat.sort_unstable();
    Ok(BenchReport {
        workload: workload.mix.workload.clone(),
        policy: d.workflow(&workload.mix.ops[0].workflow).map(|w| w.policy()).unwrap_or_default(),
        ops: total as u64,
        concurrency,
        seed,
        per_op: workload
            .mix
            .ops
            .iter()
            .zip(&counts)
            .map(|(o, (c, f))| OpReport { name: o.name.clone(), count: c.load(Ordering::Relaxed), failures: f.load(Ordering::Relaxed) })
            .collect(),
        transactions,
        recorded_transactions: recorded,
        recorded_fraction: if transactions == 0 { 0.0 } else { recorded as f64 / transactions as f64 },
        elapsed_ms: elapsed.as_secs_f64() * 1e3,
        throughput: total as f64 / elapsed.as_secs_f64().max(1e-9),
        p50_us: percentile(&lat, 0.50),
        p99_us: percentile(&lat, 0.99),
    })
}

fn percentile(sorted: &[Duration], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let i = ((sorted.len() as f64 * q).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[i].as_secs_f64() * 1e6
}

#[cfg(test)]
mod tests;
