//! `hivemind`: runs the service, or acts as its client.
//!
//! Without `--server`, commands start a private in-process service on a
//! loopback port and talk to it like any other client.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value as Json;

use hivemind_client::{Client, ClientConfig, Endpoint};
use hivemind_core::api::{BenchRequest, CheckRequest, DownstreamQuery, StateQuery};
use hivemind_core::config::{ConfigFile, RuntimeConfig};
use hivemind_core::workflow::doc::WorkflowDoc;
use hivemind_core::workflow::RecordingPolicy;
use hivemind_server::{RunningServer, ServerConfig};

#[derive(Parser)]
#[command(name = "hivemind", version, about = "Transactional workflows with exactly-once execution and data tracing")]
struct Cli {
    /// Service endpoint, `http://host:port` or `tcp://host:port`; repeat to
    /// fail over. Defaults to a private in-process service.
    #[arg(long, global = true, env = "HIVEMIND_SERVER")]
    server: Vec<String>,
    /// `key = value` config file for the service and client.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the service until interrupted.
    Serve {
        #[arg(long)]
        http: Option<String>,
        #[arg(long)]
        tcp: Option<String>,
        /// Bench workloads to load at startup, e.g. `shop,hotel`.
        #[arg(long, value_delimiter = ',')]
        preload: Vec<String>,
    },
    /// Run a workflow and print its outcome.
    Invoke {
        /// Registered workflow name.
        #[arg(long)]
        workflow: String,
        /// Workflow document to register first.
        #[arg(long)]
        file: Option<PathBuf>,
        /// Workflow input; the value is read as JSON, or as text otherwise.
        #[arg(long = "input", value_name = "KEY=VALUE")]
        inputs: Vec<String>,
        /// Resubmit under this ID instead of allocating a new one.
        #[arg(long)]
        workflow_id: Option<String>,
    },
    /// Register a workflow document.
    Register {
        #[arg(long)]
        file: PathBuf,
        #[arg(long, value_enum, default_value = "selective")]
        policy: Policy,
    },
    /// Show which units of a workflow document record their outputs.
    Sfr {
        #[arg(long)]
        workflow: PathBuf,
        /// Print the full analysis as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Check exactly-once execution under injected crashes.
    Check(CheckArgs),
    /// Run a workload mix and print the report as JSON.
    Bench {
        #[arg(long)]
        workload: String,
        #[arg(long)]
        ops: usize,
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Record every unit instead of the selected ones.
        #[arg(long)]
        naive: bool,
        /// Export a trace of every function invocation and data access.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Query exported traces.
    Trace {
        #[command(subcommand)]
        command: TraceCommand,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Policy {
    Selective,
    All,
}

impl From<Policy> for RecordingPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Selective => RecordingPolicy::Selective,
            Policy::All => RecordingPolicy::All,
        }
    }
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "target")]
struct CheckTarget {
    /// `exhaustiveN`: every graph of up to N units.
    #[arg(long)]
    graphs: Option<String>,
    /// Workflow document to run under random crash schedules.
    #[arg(long)]
    workflow: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    target: CheckTarget,
    /// Graphs of the largest size beyond this many are sampled.
    #[arg(long, default_value_t = 50_000)]
    cap: usize,
    #[arg(long, default_value_t = 1000)]
    schedules: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "input", value_name = "KEY=VALUE")]
    inputs: Vec<String>,
}

#[derive(Subcommand)]
enum TraceCommand {
    Query {
        #[command(subcommand)]
        query: Query,
    },
}

#[derive(Args)]
struct RecordArgs {
    #[arg(long)]
    table: String,
    /// Primary key: `42`, `42,abc` or a JSON array.
    #[arg(long)]
    key: String,
    /// Exported trace directory; defaults to the service's own.
    #[arg(long)]
    dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Query {
    /// Last image of a record at or before a timestamp.
    State {
        #[command(flatten)]
        record: RecordArgs,
        #[arg(long)]
        ts: u64,
    },
    /// Records written by the given functions in workflows that read a record.
    Downstream {
        #[command(flatten)]
        record: RecordArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        succ: Vec<String>,
    },
}

type Failure = Box<dyn std::error::Error>;

fn parse_value(text: &str) -> Json {
    serde_json::from_str(text).unwrap_or_else(|_| Json::String(text.to_owned()))
}

fn parse_inputs(pairs: &[String]) -> Result<Json, Failure> {
    let mut map = serde_json::Map::new();
    for p in pairs {
        let (k, v) = p.split_once('=').ok_or_else(|| format!("input {p:?} is not KEY=VALUE"))?;
        if map.insert(k.to_owned(), parse_value(v)).is_some() {
            return Err(format!("input {k} given twice").into());
        }
    }
    Ok(Json::Object(map))
}

fn parse_key(text: &str) -> Result<Vec<Json>, Failure> {
    if text.trim_start().starts_with('[') {
        return Ok(serde_json::from_str(text)?);
    }
    Ok(text.split(',').map(|p| parse_value(p.trim())).collect())
}

fn read_doc(path: &Path) -> Result<WorkflowDoc, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    Ok(WorkflowDoc::parse(&text)?)
}

fn graphs_size(spec: &str) -> Result<usize, Failure> {
    spec.strip_prefix("exhaustive")
        .and_then(|n| n.parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("--graphs {spec:?} must be exhaustiveN, e.g. exhaustive6").into())
}

fn print<T: Serialize>(v: &T) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<(ServerConfig, ClientConfig), Failure> {
    let file = match path {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let known: Vec<&str> =
        RuntimeConfig::KEYS.iter().chain(ServerConfig::KEYS).chain(ClientConfig::KEYS).copied().collect();
    file.check_known(&known)?;
    Ok((ServerConfig::from_file(&file)?, ClientConfig::from_file(&file)?))
}

/// A client, plus the private service it talks to when none was named.
async fn connect(cli: &Cli, server: ServerConfig, config: ClientConfig) -> Result<(Client, Option<RunningServer>), Failure> {
    if !cli.server.is_empty() {
        let endpoints = cli.server.iter().map(|s| s.parse::<Endpoint>()).collect::<Result<Vec<_>, _>>()?;
        return Ok((Client::new(endpoints, config)?, None));
    }
    let private = ServerConfig { http_addr: "127.0.0.1:0".into(), tcp_addr: None, ..server };
    let running = hivemind_server::start(private).await?;
    let client = Client::new(vec![Endpoint::Http(running.http_url())], config)?;
    Ok((client, Some(running)))
}

async fn serve(mut config: ServerConfig, http: Option<String>, tcp: Option<String>, preload: Vec<String>) -> Result<(), Failure> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    if let Some(h) = http {
        config.http_addr = h;
    }
    if tcp.is_some() {
        config.tcp_addr = tcp;
    }
    if !preload.is_empty() {
        config.preload = preload;
    }
    let running = hivemind_server::start(config).await?;
    let tcp = running.tcp_addr.map(|a| a.to_string());
    println!("{}", serde_json::json!({"http": running.http_url(), "tcp": tcp}));
    tokio::signal::ctrl_c().await?;
    running.shutdown().await?;
    Ok(())
}

async fn run(cli: Cli) -> Result<bool, Failure> {
    let (server_config, client_config) = load_config(cli.config.as_deref())?;
    if let Command::Serve { http, tcp, preload } = cli.command {
        serve(server_config, http, tcp, preload).await?;
        return Ok(true);
    }
    let (client, private) = connect(&cli, server_config, client_config).await?;
    let mut ok = true;
    match &cli.command {
        Command::Serve { .. } => unreachable!("handled above"),
        Command::Invoke { workflow, file, inputs, workflow_id } => {
            if let Some(path) = file {
                client.register(read_doc(path)?, RecordingPolicy::Selective).await?;
            }
            let inputs = parse_inputs(inputs)?;
            let r = match workflow_id {
                Some(id) => client.invoke_as(workflow, id, inputs).await?,
                None => client.invoke(workflow, inputs).await?,
            };
            ok = r.outputs().is_some();
            print(&serde_json::json!({"workflow_id": r.workflow_id, "outcome": r.outcome, "attempts": r.attempts}))?;
        }
        Command::Register { file, policy } => print(&client.register(read_doc(file)?, (*policy).into()).await?)?,
        Command::Sfr { workflow, json } => {
            let r = client.sfr(read_doc(workflow)?).await?;
            if *json {
                print(&r)?;
            } else {
                println!("recorded: {{{}}}", r.recorded.join(", "));
                for line in &r.explanation {
                    println!("{line}");
                }
            }
        }
        Command::Check(args) => {
            let req = match (&args.target.graphs, &args.target.workflow) {
                (Some(g), _) => CheckRequest::Graphs { max_units: graphs_size(g)?, cap: args.cap, seed: args.seed },
                (None, Some(path)) => CheckRequest::Workflow {
                    workflow: read_doc(path)?,
                    inputs: parse_inputs(&args.inputs)?,
                    schedules: args.schedules,
                    seed: args.seed,
                },
                (None, None) => unreachable!("clap requires a target"),
            };
            let r = client.check(&req).await?;
            ok = r.passed;
            print(&r)?;
        }
        Command::Bench { workload, ops, concurrency, seed, naive, trace, trace_dir } => {
            let req = BenchRequest {
                workload: workload.clone(),
                ops: *ops,
                concurrency: *concurrency,
                seed: *seed,
                policy: if *naive { RecordingPolicy::All } else { RecordingPolicy::Selective },
                trace: *trace || trace_dir.is_some(),
                trace_dir: trace_dir.clone(),
            };
            print(&client.bench(&req).await?)?;
        }
        Command::Trace { command: TraceCommand::Query { query } } => match query {
            Query::State { record, ts } => {
                let q = StateQuery { dir: record.dir.clone(), table: record.table.clone(), key: parse_key(&record.key)?, ts: *ts };
                print(&client.query_state(&q).await?)?;
            }
            Query::Downstream { record, succ } => {
                let q = DownstreamQuery {
                    dir: record.dir.clone(),
                    table: record.table.clone(),
                    key: parse_key(&record.key)?,
                    successors: succ.clone(),
                };
                print(&client.query_downstream(&q).await?)?;
            }
        },
    }
    if let Some(s) = private {
        s.shutdown().await?;
    }
    Ok(ok)
}

#[tokio::main]
async fn main() -> ExitCode {
    match run(Cli::parse()).await {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("hivemind: {e}");
            ExitCode::from(2)
        }
    }
}
