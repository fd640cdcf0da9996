//! Client for the hivemind service.
//!
//! Invocations get a workflow ID from the client's ID and a local counter.
//! A request that times out or loses its connection is resubmitted with the
//! same ID, moving to the next endpoint, so a workflow interrupted on one
//! server is resumed on another and a lost response is answered from the
//! stored result.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value as Json;
use tokio::net::TcpStream;
use tokio::sync::Mutex;
use tokio_util::codec::{Framed, LengthDelimitedCodec};

use hivemind_core::api::{
    ApiError, BenchRequest, BenchResponse, CheckRequest, CheckResponse, ConnectResponse, DownstreamQuery, DownstreamResponse,
    InvokeRequest, InvokeResponse, RegisterRequest, RegisterResponse, Request, Response, SfrRequest, SfrResponse, StateQuery,
    StateResponse, TraceSummary, MAX_FRAME,
};
use hivemind_core::config::{ConfigError, ConfigFile};
use hivemind_core::workflow::doc::WorkflowDoc;
use hivemind_core::workflow::RecordingPolicy;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Base URL, e.g. `http://127.0.0.1:7878`.
    Http(String),
    /// `host:port` of the framed TCP protocol.
    Tcp(String),
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            return Ok(Endpoint::Tcp(addr.to_owned()));
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(Endpoint::Http(s.trim_end_matches('/').to_owned()));
        }
        Err(format!("endpoint {s:?} must start with http:// or tcp://"))
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Http(url) => f.write_str(url),
            Endpoint::Tcp(addr) => write!(f, "tcp://{addr}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientConfig {
    /// How long to wait for a reply before resubmitting.
    pub timeout: Duration,
    /// Resubmissions after the first attempt before giving up.
    pub max_resubmits: u32,
    /// Pause between attempts.
    pub backoff: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig { timeout: Duration::from_secs(30), max_resubmits: 5, backoff: Duration::from_millis(50) }
    }
}

impl ClientConfig {
    pub const KEYS: &'static [&'static str] = &["request_timeout_ms", "max_resubmits", "resubmit_backoff_ms"];

    pub fn from_file(file: &ConfigFile) -> Result<Self, ConfigError> {
        let d = ClientConfig::default();
        Ok(ClientConfig {
            timeout: file.get("request_timeout_ms")?.map(Duration::from_millis).unwrap_or(d.timeout),
            max_resubmits: file.get_or("max_resubmits", d.max_resubmits)?,
            backoff: file.get("resubmit_backoff_ms")?.map(Duration::from_millis).unwrap_or(d.backoff),
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("server rejected the request: {0}")]
    Api(ApiError),
    #[error("server unavailable after {attempts} attempts: {last}")]
    ServerUnavailable { attempts: u32, last: String },
    #[error("{0} is only available over HTTP")]
    Unsupported(&'static str),
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected reply: {0}")]
    Protocol(String),
}

/// Completed invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub workflow_id: String,
    pub outcome: Json,
    /// Requests sent, including resubmissions.
    pub attempts: u32,
}

impl Invocation {
    pub fn outputs(&self) -> Option<&serde_json::Map<String, Json>> {
        self.outcome.get("success")?.as_object()
    }
}

/// An attempt failed in a way that a resubmission may fix.
enum Attempt<T> {
    Done(T),
    Retry(String),
    Fatal(ClientError),
}

type Conn = Framed<TcpStream, LengthDelimitedCodec>;

pub struct Client {
    endpoints: Vec<Endpoint>,
    current: AtomicUsize,
    config: ClientConfig,
    http: reqwest::Client,
    tcp: Mutex<Option<Conn>>,
    client_id: Mutex<Option<u64>>,
    counter: AtomicU64,
}

impl Client {
    pub fn new(endpoints: Vec<Endpoint>, config: ClientConfig) -> Result<Self, ClientError> {
        if endpoints.is_empty() {
            return Err(ClientError::Transport("no endpoints".into()));
        }
        let http = reqwest::Client::builder().build().map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(Client {
            endpoints,
            current: AtomicUsize::new(0),
            config,
            http,
            tcp: Mutex::new(None),
            client_id: Mutex::new(None),
            counter: AtomicU64::new(0),
        })
    }

    pub fn single(endpoint: Endpoint) -> Result<Self, ClientError> {
        Self::new(vec![endpoint], ClientConfig::default())
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoints[self.current.load(Ordering::Relaxed) % self.endpoints.len()]
    }

    async fn fail_over(&self) {
        *self.tcp.lock().await = None;
        if self.endpoints.len() > 1 {
            self.current.fetch_add(1, Ordering::Relaxed);
        }
    }

    /// The client's ID, allocated by the server on first use.
    pub async fn client_id(&self) -> Result<u64, ClientError> {
        let mut id = self.client_id.lock().await;
        if let Some(id) = *id {
            return Ok(id);
        }
        let reply: ConnectResponse = self
            .retrying(|| async {
                match self.endpoint().clone() {
                    Endpoint::Http(url) => self.http_once(&url, "/connect", &Json::Null, Some(self.config.timeout)).await,
                    Endpoint::Tcp(addr) => match self.tcp_once(&addr, &Request::Connect).await {
                        Attempt::Done(Response::Connected(c)) => Attempt::Done(c),
                        other => unexpected(other),
                    },
                }
            })
            .await?;
        *id = Some(reply.client_id);
        Ok(reply.client_id)
    }

    /// Invokes `workflow` under a fresh workflow ID.
    pub async fn invoke(&self, workflow: &str, inputs: Json) -> Result<Invocation, ClientError> {
        let client = self.client_id().await?;
        let counter = self.counter.fetch_add(1, Ordering::Relaxed) + 1;
        self.invoke_as(workflow, &format!("{client}:{counter}"), inputs).await
    }

    /// Invokes under a given workflow ID, resubmitting it until a reply
    /// arrives or the attempts run out.
    pub async fn invoke_as(&self, workflow: &str, workflow_id: &str, inputs: Json) -> Result<Invocation, ClientError> {
        let req = InvokeRequest { workflow: workflow.to_owned(), workflow_id: workflow_id.to_owned(), inputs };
        let attempts = AtomicU64::new(0);
        let reply: InvokeResponse = self
            .retrying(|| async {
                attempts.fetch_add(1, Ordering::Relaxed);
                match self.endpoint().clone() {
                    Endpoint::Http(url) => self.http_once(&url, "/invoke", &req, Some(self.config.timeout)).await,
                    Endpoint::Tcp(addr) => match self.tcp_once(&addr, &Request::Invoke(req.clone())).await {
                        Attempt::Done(Response::Invoked(r)) => Attempt::Done(r),
                        other => unexpected(other),
                    },
                }
            })
            .await?;
        Ok(Invocation { workflow_id: reply.workflow_id, outcome: reply.outcome, attempts: attempts.load(Ordering::Relaxed) as u32 })
    }

    pub async fn register(&self, workflow: WorkflowDoc, policy: RecordingPolicy) -> Result<RegisterResponse, ClientError> {
        let req = RegisterRequest { workflow, policy };
        self.retrying(|| async {
            match self.endpoint().clone() {
                Endpoint::Http(url) => self.http_once(&url, "/workflows", &req, Some(self.config.timeout)).await,
                Endpoint::Tcp(addr) => match self.tcp_once(&addr, &Request::Register(req.clone())).await {
                    Attempt::Done(Response::Registered(r)) => Attempt::Done(r),
                    other => unexpected(other),
                },
            }
        })
        .await
    }

    pub async fn workflows(&self) -> Result<Vec<RegisterResponse>, ClientError> {
        let url = self.http_url("workflows")?;
        let attempt = self.send(self.http.get(format!("{url}/workflows")), Some(self.config.timeout)).await;
        finish(attempt)
    }

    pub async fn sfr(&self, workflow: WorkflowDoc) -> Result<SfrResponse, ClientError> {
        self.long("sfr", "/sfr", &SfrRequest { workflow }).await
    }

    /// Model checking can run for minutes, so no timeout applies.
    pub async fn check(&self, req: &CheckRequest) -> Result<CheckResponse, ClientError> {
        self.long("check", "/check", req).await
    }

    pub async fn bench(&self, req: &BenchRequest) -> Result<BenchResponse, ClientError> {
        self.long("bench", "/bench", req).await
    }

    pub async fn flush_trace(&self) -> Result<Option<TraceSummary>, ClientError> {
        self.long("trace", "/trace/flush", &Json::Null).await
    }

    pub async fn query_state(&self, q: &StateQuery) -> Result<StateResponse, ClientError> {
        self.long("trace", "/trace/state", q).await
    }

    pub async fn query_downstream(&self, q: &DownstreamQuery) -> Result<DownstreamResponse, ClientError> {
        self.long("trace", "/trace/downstream", q).await
    }

    fn http_url(&self, what: &'static str) -> Result<String, ClientError> {
        self.endpoints
            .iter()
            .find_map(|e| match e {
                Endpoint::Http(url) => Some(url.clone()),
                Endpoint::Tcp(_) => None,
            })
            .ok_or(ClientError::Unsupported(what))
    }

    async fn long<B: Serialize, T: DeserializeOwned>(&self, what: &'static str, path: &str, body: &B) -> Result<T, ClientError> {
        let url = self.http_url(what)?;
        finish(self.http_once(&url, path, body, None).await)
    }

    async fn retrying<T, F, Fut>(&self, mut attempt: F) -> Result<T, ClientError>
    where
        F: FnMut() -> Fut,
        Fut: std::future::Future<Output = Attempt<T>>,
    {
        let mut last = String::new();
        for n in 0..=self.config.max_resubmits {
            if n > 0 {
                tokio::time::sleep(self.config.backoff).await;
            }
            match attempt().await {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(why) => {
                    last = why;
                    self.fail_over().await;
                }
            }
        }
        Err(ClientError::ServerUnavailable { attempts: self.config.max_resubmits + 1, last })
    }

    async fn http_once<B: Serialize, T: DeserializeOwned>(
        &self,
        base: &str,
        path: &str,
        body: &B,
        timeout: Option<Duration>,
    ) -> Attempt<T> {
        self.send(self.http.post(format!("{base}{path}")).json(body), timeout).await
    }

    async fn send<T: DeserializeOwned>(&self, req: reqwest::RequestBuilder, timeout: Option<Duration>) -> Attempt<T> {
        let call = async {
            let resp = req.send().await.map_err(|e| format!("request failed: {e}"))?;
            let status = resp.status();
            let bytes = resp.bytes().await.map_err(|e| format!("reading reply: {e}"))?;
            Ok::<_, String>((status, bytes))
        };
        let result = match timeout {
            Some(t) => tokio::time::timeout(t, call).await.unwrap_or_else(|_| Err(format!("no reply within {t:?}"))),
            None => call.await,
        };
        let (status, bytes) = match result {
            Ok(r) => r,
            Err(why) => return Attempt::Retry(why),
        };
        if status.is_success() {
            return match serde_json::from_slice(&bytes) {
                Ok(v) => Attempt::Done(v),
                Err(e) => Attempt::Fatal(ClientError::Protocol(e.to_string())),
            };
        }
        match serde_json::from_slice::<ApiError>(&bytes) {
            Ok(e) if e.kind == "unavailable" => Attempt::Retry(e.to_string()),
            Ok(e) => Attempt::Fatal(ClientError::Api(e)),
            Err(_) => Attempt::Retry(format!("http {status}")),
        }
    }

    async fn tcp_once(&self, addr: &str, req: &Request) -> Attempt<Response> {
        let mut conn = self.tcp.lock().await;
        let body = serde_json::to_vec(req).expect("requests serialize");
        let exchange = async {
            if conn.is_none() {
                let stream = TcpStream::connect(addr).await.map_err(|e| format!("connecting to {addr}: {e}"))?;
                let _ = stream.set_nodelay(true);
                let codec = LengthDelimitedCodec::builder().max_frame_length(MAX_FRAME).new_codec();
                *conn = Some(Framed::new(stream, codec));
            }
            let framed = conn.as_mut().expect("connected above");
            framed.send(body.as_slice()).await.map_err(|e| format!("sending: {e}"))?;
            match framed.next().await {
                Some(Ok(frame)) => Ok(frame),
                Some(Err(e)) => Err(format!("receiving: {e}")),
                None => Err("connection closed before the reply".to_owned()),
            }
        };
        let frame = match tokio::time::timeout(self.config.timeout, exchange).await {
            Ok(Ok(frame)) => frame,
            Ok(Err(why)) => {
                *conn = None;
                return Attempt::Retry(why);
            }
            Err(_) => {
                // A late reply would answer the wrong request.
                *conn = None;
                return Attempt::Retry(format!("no reply within {:?}", self.config.timeout));
            }
        };
        match serde_json::from_slice::<Response>(&frame) {
            Ok(Response::Error(e)) if e.kind == "unavailable" => Attempt::Retry(e.to_string()),
            Ok(Response::Error(e)) => Attempt::Fatal(ClientError::Api(e)),
            Ok(r) => Attempt::Done(r),
            Err(e) => Attempt::Fatal(ClientError::Protocol(e.to_string())),
        }
    }
}

fn unexpected<T>(a: Attempt<Response>) -> Attempt<T> {
    match a {
        Attempt::Done(r) => Attempt::Fatal(ClientError::Protocol(format!("{r:?}"))),
        Attempt::Retry(why) => Attempt::Retry(why),
        Attempt::Fatal(e) => Attempt::Fatal(e),
    }
}

fn finish<T>(a: Attempt<T>) -> Result<T, ClientError> {
    match a {
        Attempt::Done(v) => Ok(v),
        Attempt::Fatal(e) => Err(e),
        Attempt::Retry(why) => Err(ClientError::Transport(why)),
    }
}
