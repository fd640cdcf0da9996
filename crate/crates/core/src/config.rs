//! Runtime configuration from `key = value` lines.
//!
//! Blank lines and lines starting with `#` are skipped. Values are taken
//! verbatim after trimming; surrounding double quotes are removed.
//!
//! ```text
//! partitions = 8
//! ring_capacity = 65536
//! trace_dir = /var/lib/hivemind/trace
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::dispatcher::DispatcherConfig;
use crate::engine::EngineConfig;
use crate::trace::export::ExporterConfig;
use crate::trace::TracerConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key {key}")]
    Duplicate { line: usize, key: String },
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("{key}: cannot parse {value:?}")]
    Value { key: String, value: String },
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            let v = v.trim();
            let v = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v);
            if entries.insert(key.to_owned(), v.to_owned()).is_some() {
                return Err(ConfigError::Duplicate { line: i + 1, key: key.to_owned() });
            }
        }
        Ok(ConfigFile { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        Self::parse(&text)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.raw(key)
            .map(|v| v.parse().map_err(|_| ConfigError::Value { key: key.to_owned(), value: v.to_owned() }))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    /// Rejects keys outside `known`, catching typos.
    pub fn check_known(&self, known: &[&str]) -> Result<(), ConfigError> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(ConfigError::UnknownKey(k.clone())),
            None => Ok(()),
        }
    }
}

/// Settings of the embedded runtime.
#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub engine: EngineConfig,
    pub dispatcher: DispatcherConfig,
    pub tracer: TracerConfig,
    pub exporter: ExporterConfig,
    /// Where traces are exported; tracing is off when unset.
    pub trace_dir: Option<PathBuf>,
}

impl RuntimeConfig {
    pub const KEYS: &'static [&'static str] = &[
        "partitions",
        "max_retries",
        "unit_workers",
        "result_ttl",
        "ring_capacity",
        "spill_path",
        "export_batch",
        "export_period_ms",
        "trace_dir",
    ];

    pub fn from_file(file: &ConfigFile) -> Result<Self, ConfigError> {
        let (dispatcher, tracer, exporter) = (DispatcherConfig::default(), TracerConfig::default(), ExporterConfig::default());
        let batch = file.get_or("export_batch", exporter.batch)?;
        let partitions: usize = file.get_or("partitions", EngineConfig::default().partitions)?;
        if partitions == 0 {
            return Err(ConfigError::Value { key: "partitions".into(), value: "0".into() });
        }
        Ok(RuntimeConfig {
            engine: EngineConfig { partitions },
            dispatcher: DispatcherConfig {
                max_retries: file.get_or("max_retries", dispatcher.max_retries)?,
                unit_workers: file.get_or("unit_workers", dispatcher.unit_workers)?,
                result_ttl: file.get_or("result_ttl", dispatcher.result_ttl)?,
            },
            tracer: TracerConfig {
                capacity: file.get_or("ring_capacity", tracer.capacity)?,
                spill_path: file.get("spill_path")?,
                batch_hint: batch,
            },
            exporter: ExporterConfig {
                batch,
                period: file.get("export_period_ms")?.map(Duration::from_millis).unwrap_or(exporter.period),
                ..exporter
            },
            trace_dir: file.get("trace_dir")?,
        })
    }
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self::from_file(&ConfigFile::default()).expect("defaults parse")
    }
}
