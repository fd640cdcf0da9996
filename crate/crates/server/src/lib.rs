//! Network service over the hivemind runtime: HTTP/JSON for every
//! operation, plus a length-prefixed JSON protocol over TCP for connect,
//! invoke and register.

pub mod http;
pub mod service;
pub mod tcp;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use hivemind_core::api::ApiError;
use hivemind_core::config::{ConfigError, ConfigFile, RuntimeConfig};

pub use service::Service;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub runtime: RuntimeConfig,
    pub http_addr: String,
    /// The TCP protocol is off when unset.
    pub tcp_addr: Option<String>,
    /// Bench workloads to load and register at startup.
    pub preload: Vec<String>,
}

impl ServerConfig {
    pub const KEYS: &'static [&'static str] = &["http_addr", "tcp_addr", "preload"];

    pub fn from_file(file: &ConfigFile) -> Result<Self, ConfigError> {
        Ok(ServerConfig {
            runtime: RuntimeConfig::from_file(file)?,
            http_addr: file.raw("http_addr").unwrap_or("127.0.0.1:7878").to_owned(),
            tcp_addr: file.raw("tcp_addr").map(str::to_owned),
            preload: file
                .raw("preload")
                .map(|p| p.split(',').map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect())
                .unwrap_or_default(),
        })
    }

    /// Reads a config file, rejecting keys that neither the runtime, the
    /// server nor the client understands.
    pub fn load(path: &Path, client_keys: &[&str]) -> Result<Self, ConfigError> {
        let file = ConfigFile::load(path)?;
        let known: Vec<&str> = RuntimeConfig::KEYS.iter().chain(Self::KEYS).chain(client_keys).copied().collect();
        file.check_known(&known)?;
        Self::from_file(&file)
    }

    /// Loopback on ephemeral ports, for embedding and tests.
    pub fn ephemeral() -> Self {
        ServerConfig {
            runtime: RuntimeConfig::default(),
            http_addr: "127.0.0.1:0".into(),
            tcp_addr: Some("127.0.0.1:0".into()),
            preload: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("binding {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("starting the runtime: {0}")]
    Startup(ApiError),
    #[error("runtime task failed: {0}")]
    Join(#[from] tokio::task::JoinError),
}

pub struct RunningServer {
    pub http_addr: SocketAddr,
    pub tcp_addr: Option<SocketAddr>,
    pub service: Arc<Service>,
    shutdown: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl RunningServer {
    pub fn http_url(&self) -> String {
        format!("http://{}", self.http_addr)
    }

    /// Stops accepting requests and waits for the listeners to close.
    pub async fn shutdown(self) -> Result<(), ServerError> {
        let _ = self.shutdown.send(true);
        for t in self.tasks {
            t.await?;
        }
        Ok(())
    }

    /// Runs until the listeners stop.
    pub async fn wait(self) -> Result<(), ServerError> {
        for t in self.tasks {
            t.await?;
        }
        Ok(())
    }
}

async fn bind(addr: &str) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr).await.map_err(|source| ServerError::Bind { addr: addr.to_owned(), source })
}

/// Builds the runtime and starts the listeners.
pub async fn start(config: ServerConfig) -> Result<RunningServer, ServerError> {
    let (runtime, preload) = (config.runtime.clone(), config.preload.clone());
    let service = tokio::task::spawn_blocking(move || Service::new(runtime, &preload)).await?.map_err(ServerError::Startup)?;
    start_with(Arc::new(service), &config).await
}

/// Starts listeners over an existing service.
pub async fn start_with(service: Arc<Service>, config: &ServerConfig) -> Result<RunningServer, ServerError> {
    let (tx, rx) = watch::channel(false);
    let http = bind(&config.http_addr).await?;
    let http_addr = http.local_addr().map_err(|source| ServerError::Bind { addr: config.http_addr.clone(), source })?;
    let mut tasks = Vec::new();
    let app = http::router(service.clone());
    let mut stop = rx.clone();
    tasks.push(tokio::spawn(async move {
        let graceful = async move {
            let _ = stop.changed().await;
        };
        if let Err(e) = axum::serve(http, app).with_graceful_shutdown(graceful).await {
            tracing::error!(error = %e, "http server failed");
        }
    }));
    let tcp_addr = match &config.tcp_addr {
        Some(addr) => {
            let listener = bind(addr).await?;
            let local = listener.local_addr().map_err(|source| ServerError::Bind { addr: addr.clone(), source })?;
            tasks.push(tokio::spawn(tcp::serve(listener, service.clone(), rx)));
            Some(local)
        }
        None => None,
    };
    tracing::info!(%http_addr, ?tcp_addr, "hivemind listening");
    Ok(RunningServer { http_addr, tcp_addr, service, shutdown: tx, tasks })
}
